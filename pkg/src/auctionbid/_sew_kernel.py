"""Compiled whole-trace SEW loop over the flat ledger buffers.

Mirrors sew_weights / sew_select_bid / sew_update step for step, including
the bin-boundary correction, the softmax operation order and the
one-uniform-per-level RNG contract, so both paths emit the same bids.
"""

from __future__ import annotations

import math

import numba
import numpy as np


@numba.njit(cache=True)
def _bin(v, M):
    k = math.ceil(M * v)
    if k > 1 and v <= (k - 1) / M:
        k -= 1
    elif k < M and v > k / M:
        k += 1
    if k < 1:
        k = 1
    if k > M:
        k = M
    return k


@numba.njit(cache=True)
def _sample(p, u):
    c0 = p[0]
    c1 = c0 + p[1]
    c2 = c1 + p[2]
    c3 = c2 + p[3]
    x = u * c3
    idx = 0
    if c0 <= x:
        idx += 1
    if c1 <= x:
        idx += 1
    if c2 <= x:
        idx += 1
    if c3 <= x:
        idx += 1
    if idx > 3:
        idx = 3
    while p[idx] <= 0 and idx > 0:
        idx -= 1
    return idx


@numba.njit(cache=True)
def _reward(b, v, m):
    if b >= m:
        return v - b
    return 0.0


@numba.njit(cache=True)
def sew_kernel(v, m, uniforms, L, R, Rd, visits, offR, offD, offV, empirical, clip,
               bids, payoffs, expected):
    T = v.shape[0]
    log4 = math.log(4.0)
    Wmax = 2**L - 1
    Umax = 2 ** (L + 1) - 1
    probs = np.empty((L, Wmax, 4))
    bins = np.empty(L, dtype=np.int64)
    r_child = np.empty(Umax)
    r_cur = np.empty(Umax)
    d_child = np.empty(Wmax)
    d_cur = np.empty(Wmax)
    evals = 0
    for t in range(T):
        vt = v[t]
        mt = m[t]
        # step 1
        for i in range(L):
            lev = i + 1
            M = 2 ** (lev + 1)
            U = M - 1
            W = 2**lev - 1
            b = _bin(vt, M)
            bins[i] = b
            vi = offV[i] + b - 1
            visits[vi] += 1
            n = visits[vi]
            gap = 2.0 ** (1 - lev)
            if empirical:
                eta = 5.0 / math.sqrt(n * gap)
            else:
                eta = min(0.25, math.sqrt(log4 / (n * gap)))
            baseR = offR[i] + (b - 1) * U
            baseD = offD[i] + (b - 1) * W
            for w in range(W):
                z0 = eta * R[baseR + 2 * w]
                z1 = eta * R[baseR + 2 * w + 1]
                z2 = eta * R[baseR + 2 * w + 2]
                z3 = eta * Rd[baseD + w]
                zm = max(max(z0, z1), max(z2, z3))
                e0 = math.exp(z0 - zm)
                e1 = math.exp(z1 - zm)
                e2 = math.exp(z2 - zm)
                e3 = math.exp(z3 - zm)
                s = e0 + e1 + e2 + e3
                probs[i, w, 0] = e0 / s
                probs[i, w, 1] = e1 / s
                probs[i, w, 2] = e2 / s
                probs[i, w, 3] = e3 / s
            evals += W
        # step 2
        w = 1
        bid = -1.0
        for i in range(L):
            lev = i + 1
            s = _sample(probs[i, w - 1], uniforms[t, i]) + 1
            if s == 4:
                bid = 2.0**-lev * (w + 1)
                break
            if lev < L:
                w = 2 * (w - 1) + s
            else:
                bid = 2.0 ** (-L - 1) * (2 * (w - 1) + s)
                break
        if clip and bid > vt:
            bid = vt
        bids[t] = bid
        payoffs[t] = _reward(bid, vt, mt)
        # step 3
        for i in range(L - 1, -1, -1):
            lev = i + 1
            M = 2 ** (lev + 1)
            U = M - 1
            W = 2**lev - 1
            b = bins[i]
            baseR = offR[i] + (b - 1) * U
            baseD = offD[i] + (b - 1) * W
            for w in range(W):
                d_cur[w] = _reward(2.0**-lev * (w + 2), vt, mt)
            if lev == L:
                for u in range(U):
                    r_cur[u] = _reward(2.0 ** (-L - 1) * (u + 1), vt, mt)
            else:
                for u in range(U):
                    p = probs[i + 1, u]
                    r_cur[u] = (p[0] * r_child[2 * u] + p[1] * r_child[2 * u + 1]
                                + p[2] * r_child[2 * u + 2] + p[3] * d_child[u])
            for u in range(U):
                R[baseR + u] += r_cur[u]
                r_child[u] = r_cur[u]
            for w in range(W):
                Rd[baseD + w] += d_cur[w]
                d_child[w] = d_cur[w]
        p1 = probs[0, 0]
        expected[t] = p1[0] * r_child[0] + p1[1] * r_child[1] + p1[2] * r_child[2] + p1[3] * d_child[0]
    return evals
