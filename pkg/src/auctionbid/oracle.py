"""Hindsight benchmarks on a bid grid: best 1-Lipschitz, best monotone and best constant bid."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numba
import numpy as np

from .core import AuctionTrace

LIPSCHITZ = "lipschitz"
MONOTONE = "monotone"
FIXED = "fixed"
ORACLE_CLASSES = (LIPSCHITZ, MONOTONE, FIXED)

# Float guard when turning G * (v' - v) + 1 into an integer window.
WINDOW_EPS = 1e-9
# Stage-by-grid size below which the DP runs in exact integer arithmetic.
EXACT_BUDGET = 4096


def default_grid(T: int) -> int:
    return max(2, math.ceil(math.sqrt(T)))


def lipschitz_window(dv: float, G: int) -> int:
    """Largest grid step allowed between adjacent stages that are ``dv`` apart."""
    return int(math.floor(G * dv + 1 + WINDOW_EPS))


@dataclass
class OracleResult:
    best_reward: float
    knots: list[tuple[float, float]]
    G: int
    error_bound: float
    oracle_class: str
    bids: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)

    def to_text(self) -> str:
        lines = [
            f"class={self.oracle_class}",
            f"G={self.G}",
            f"best_reward={self.best_reward!r}",
            f"error_bound={self.error_bound!r}",
            "v,b",
        ]
        lines += [f"{v!r},{b!r}" for v, b in self.knots]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "OracleResult":
        it = iter(text.splitlines())
        head = {}
        for line in it:
            if line == "v,b":
                break
            k, _, val = line.partition("=")
            head[k] = val
        knots = [tuple(float(x) for x in line.split(",")) for line in it if line]
        return cls(float(head["best_reward"]), knots, int(head["G"]), float(head["error_bound"]), head["class"])


def _stages(trace: AuctionTrace):
    """Stable value order, stage id per sorted round, and one representative value per stage."""
    key = trace.order_key()
    order = np.argsort(key, kind="stable")
    ks = key[order]
    new = np.ones(len(ks), dtype=bool)
    new[1:] = ks[1:] != ks[:-1]
    stage = np.cumsum(new) - 1
    starts = np.flatnonzero(new)
    return order, stage, starts


@numba.njit(cache=True)
def _stage_gain(v, m, lo, hi, G, out):
    out[:] = 0.0
    for i in range(lo, hi):
        for j in range(G + 1):
            b = j / G
            if b >= m[i]:
                out[j] += v[i] - b


@numba.njit(cache=True)
def _stage_gains_total(v, m, G):
    out = np.zeros(G + 1)
    for i in range(v.shape[0]):
        for j in range(G + 1):
            b = j / G
            if b >= m[i]:
                out[j] += v[i] - b
    return out


@numba.njit(cache=True)
def _dp(v, m, starts, windows, G, monotone):
    """Max-plus recursion over stages; back[s, j] is the predecessor grid index."""
    S = starts.shape[0]
    T = v.shape[0]
    n = G + 1
    back = np.zeros((S, n), dtype=np.int16)
    gain = np.empty(n)
    cur = np.empty(n)
    nxt = np.empty(n)
    _stage_gain(v, m, starts[0], starts[1] if S > 1 else T, G, cur)
    for s in range(1, S):
        _stage_gain(v, m, starts[s], starts[s + 1] if s + 1 < S else T, G, gain)
        w = windows[s]
        if monotone:
            best = cur[0]
            arg = 0
            for j in range(n):
                if cur[j] > best:
                    best = cur[j]
                    arg = j
                nxt[j] = best + gain[j]
                back[s, j] = arg
        else:
            for j in range(n):
                lo = max(0, j - w)
                hi = min(n - 1, j + w)
                best = cur[lo]
                arg = lo
                for i in range(lo + 1, hi + 1):
                    if cur[i] > best:
                        best = cur[i]
                        arg = i
                nxt[j] = best + gain[j]
                back[s, j] = arg
        cur[:] = nxt
    return cur, back


def _check_grid(G: int) -> None:
    if G > 32767:
        raise ValueError(f"grid size {G} exceeds the backpointer range")
    if G < 2:
        raise ValueError(f"grid size must be >= 2, got {G}")


def exact_total(bids, v, m) -> float:
    """Sum of rewards computed in rational arithmetic and rounded once.

    Wins are decided by the float rule of :func:`reward`; only the
    accumulation is exact, so equal-valued policies report equal floats.
    """
    total = Fraction(0)
    for b, vi, mi in zip(np.asarray(bids, dtype=float).tolist(), np.asarray(v).tolist(), np.asarray(m).tolist()):
        if b >= mi:
            total += Fraction(vi) - Fraction(b)
    return float(total)


def _replay(trace: AuctionTrace, bids: np.ndarray, G: int) -> float:
    # Grid bids j/G are rational but not floats; use the exact j/G.
    j = np.rint(bids * G).astype(np.int64)
    total = Fraction(0)
    for ji, vi, mi in zip(j.tolist(), trace.v.tolist(), trace.m.tolist()):
        if ji / G >= mi:
            total += Fraction(vi) - Fraction(ji, G)
    return float(total)


def _dp_exact(trace: AuctionTrace, order, starts, windows, G: int, monotone: bool):
    """Integer max-plus DP: rewards scaled by a common power-of-two times G."""
    T = trace.T
    vs, ms = trace.v[order].tolist(), trace.m[order].tolist()
    shift = max(Fraction(x).denominator.bit_length() - 1 for x in vs)
    scale = G << shift
    vint = [int(Fraction(x) * scale) for x in vs]
    n = G + 1
    S = len(starts)
    bounds = list(starts.tolist()) + [T]
    gains = []
    for s in range(S):
        g = [0] * n
        for i in range(bounds[s], bounds[s + 1]):
            for j in range(n):
                if j / G >= ms[i]:
                    g[j] += vint[i] - (j << shift)
        gains.append(g)
    back = np.zeros((S, n), dtype=np.int32)
    cur = gains[0]
    for s in range(1, S):
        w = int(windows[s])
        nxt = [0] * n
        if monotone:
            best, arg = cur[0], 0
            for j in range(n):
                if cur[j] > best:
                    best, arg = cur[j], j
                nxt[j] = best + gains[s][j]
                back[s, j] = arg
        else:
            for j in range(n):
                lo, hi = max(0, j - w), min(n - 1, j + w)
                arg = max(range(lo, hi + 1), key=lambda i: (cur[i], -i))
                nxt[j] = cur[arg] + gains[s][j]
                back[s, j] = arg
        cur = nxt
    jbest = max(range(n), key=lambda j: (cur[j], -j))
    return jbest, back, float(Fraction(cur[jbest], scale))


def _class_dp(trace: AuctionTrace, G: int, cls: str, exact: bool | None = None) -> OracleResult:
    _check_grid(G)
    T = trace.T
    if T == 0:
        return OracleResult(0.0, [], G, 0.0, cls, np.zeros(0))
    order, stage, starts = _stages(trace)
    vs, ms = trace.v[order], trace.m[order]
    sv = vs[starts]
    windows = np.zeros(len(starts), dtype=np.int64)
    if cls == LIPSCHITZ:
        windows[1:] = [lipschitz_window(d, G) for d in np.diff(sv).tolist()]
    if exact is None:
        exact = len(starts) * (G + 1) <= EXACT_BUDGET
    if exact:
        j, back, _ = _dp_exact(trace, order, starts, windows, G, cls == MONOTONE)
    else:
        final, back = _dp(vs, ms, starts, windows, G, cls == MONOTONE)
        j = int(np.argmax(final))
    path = np.empty(len(starts), dtype=np.int64)
    for s in range(len(starts) - 1, -1, -1):
        path[s] = j
        j = back[s, j]
    stage_bids = path / G
    bids = np.empty(T)
    bids[order] = stage_bids[stage]
    knots = list(zip(sv.tolist(), stage_bids.tolist()))
    return OracleResult(_replay(trace, bids, G), knots, G, T / G, cls, bids)


def best_lipschitz(trace: AuctionTrace, G: int | None = None, exact: bool | None = None) -> OracleResult:
    """Best grid policy whose adjacent-stage steps obey |db| <= dv + 1/G.

    Small instances run the DP in exact integer arithmetic (``exact=None``
    picks automatically); large ones use a compiled float DP whose optimum
    may differ from the exact one by rounding error only.
    """
    return _class_dp(trace, G or default_grid(trace.T), LIPSCHITZ, exact)


def best_monotone(trace: AuctionTrace, G: int | None = None, exact: bool | None = None) -> OracleResult:
    """Best non-decreasing grid policy over the value order."""
    return _class_dp(trace, G or default_grid(trace.T), MONOTONE, exact)


def best_fixed_bid(trace: AuctionTrace, G: int | None = None) -> OracleResult:
    G = G or default_grid(trace.T)
    _check_grid(G)
    T = trace.T
    if T == 0:
        return OracleResult(0.0, [], G, 0.0, FIXED, np.zeros(0))
    gains = _stage_gains_total(trace.v, trace.m, G)
    b = int(np.argmax(gains)) / G
    bids = np.full(T, b)
    return OracleResult(_replay(trace, bids, G), [(0.0, b), (1.0, b)], G, T / G, FIXED, bids)


def run_oracle(trace: AuctionTrace, cls: str, G: int | None = None) -> OracleResult:
    fns = {LIPSCHITZ: best_lipschitz, MONOTONE: best_monotone, FIXED: best_fixed_bid}
    if cls not in fns:
        raise ValueError(f"unknown oracle class {cls!r}; expected one of {ORACLE_CLASSES}")
    return fns[cls](trace, G)


def witness_feasible(result: OracleResult) -> bool:
    """Class constraint on consecutive knots, in exact integer grid units."""
    G = result.G
    for (v1, b1), (v2, b2) in zip(result.knots, result.knots[1:]):
        j1, j2 = round(b1 * G), round(b2 * G)
        if result.oracle_class == MONOTONE and j2 < j1:
            return False
        if result.oracle_class == LIPSCHITZ and abs(j2 - j1) > lipschitz_window(v2 - v1, G):
            return False
        if result.oracle_class == FIXED and j2 != j1:
            return False
    return True


def regret(trace: AuctionTrace, policy_rewards, oracle: OracleResult) -> float:
    r = np.asarray(policy_rewards, dtype=float)
    if r.shape != (trace.T,):
        raise ValueError(f"policy rewards have length {r.size}, trace has {trace.T}")
    return oracle.best_reward - math.fsum(r.tolist())
