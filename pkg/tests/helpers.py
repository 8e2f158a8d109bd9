"""Independent oracles shared by the unit and acceptance tests."""

from __future__ import annotations

import itertools
from fractions import Fraction

import numpy as np

# ---------------------------------------------------------------- oracle brute force


def brute_force_oracle(v, m, G: int, cls: str) -> float:
    """Max over all grid policies (one bid per distinct value) obeying the class constraint.

    Sums are exact rationals, wins use the float rule b >= m on b = j / G.
    """
    vals = sorted(set(v))
    best = None
    for js in itertools.product(range(G + 1), repeat=len(vals)):
        ok = True
        for (j1, w1), (j2, w2) in zip(zip(js, vals), zip(js[1:], vals[1:])):
            if cls == "monotone" and j2 < j1:
                ok = False
            if cls == "lipschitz" and abs(j2 - j1) > G * (w2 - w1) + 1 + 1e-9:
                ok = False
            if not ok:
                break
        if not ok:
            continue
        bid = dict(zip(vals, js))
        total = sum((Fraction(x) - Fraction(bid[x], G) for x, y in zip(v, m) if bid[x] / G >= y), Fraction(0))
        best = total if best is None or total > best else best
    return float(best)


# ---------------------------------------------------------------- three-employee covering


def random_lipschitz_units(n: int, knots: int, scale: int, step: int, rng) -> np.ndarray:
    """n random 1-Lipschitz maps into [0, 1] as integer knot values (unit 1/scale).

    Adjacent knots are ``step`` units apart in x, so increments lie in
    [-step, step]; clipping to [0, scale] keeps the Lipschitz constant.
    """
    f = np.empty((n, knots), dtype=np.int64)
    f[:, 0] = rng.integers(0, scale + 1, n)
    kind = rng.integers(0, 3, n)
    for k in range(1, knots):
        inc = rng.integers(-step, step + 1, n)
        # some functions ride the extreme slopes to stress interval boundaries
        inc = np.where(kind == 1, np.sign(inc) * step, inc)
        f[:, k] = np.clip(f[:, k - 1] + inc, 0, scale)
    return f


def covering_check(f: np.ndarray, L: int, scale: int, knots_per_unit: int) -> tuple[int, int]:
    """Count (premises, violations) of the three-employee covering over levels 1..L-1.

    ``f`` holds integer knot values on the grid x_k = k / knots_per_unit.
    f(I) subset of J = (c, d] for I = (a, b]: every knot in (a, b] above c,
    f(a) >= c, and every knot in [a, b] at most d (PL functions attain
    their extrema at knots).
    """

    def image_stats(level: int):
        M = 2 ** (level + 1)
        w = knots_per_unit // M
        idx = np.arange(M)
        seg = np.stack([f[:, i * w: (i + 1) * w + 1] for i in idx], axis=1)  # (n, M, w+1)
        return seg.max(axis=2), seg[:, :, 1:].min(axis=2), seg[:, :, 0]

    def inside(stats, level: int, u: int) -> np.ndarray:
        hi, lo_open, left = stats
        unit = scale // 2 ** (level + 1)
        c, d = unit * (u - 1), unit * (u + 1)
        return (hi <= d) & (lo_open > c) & (left >= c)

    premises = violations = 0
    for level in range(1, L):
        s, s_next = image_stats(level), image_stats(level + 1)
        U = 2 ** (level + 1) - 1
        M = 2 ** (level + 1)
        for u in range(1, U + 1):
            prem = inside(s, level, u)  # (n, M)
            for child in (0, 1):
                mk = 2 * np.arange(M) + child  # 0-based child bins 2m-1, 2m
                ok = np.zeros_like(prem)
                for up in (2 * u - 1, 2 * u, 2 * u + 1):
                    ok |= inside(s_next, level + 1, up)[:, mk]
                premises += int(prem.sum())
                violations += int((prem & ~ok).sum())
    return premises, violations


# ---------------------------------------------------------------- product experts


def joint_product_distribution(v, m, M: int, eta: float, t: int) -> np.ndarray:
    """Bid distribution at round t (0-based) of plain EW over all M^M product experts."""
    actions = np.arange(1, M + 1) / M
    experts = list(itertools.product(range(M), repeat=M))
    bins = [min(max(int(np.ceil(M * x)), 1), M) - 1 for x in v]
    # exact "ceil" boundary fix is irrelevant for random floats
    totals = []
    for e in experts:
        totals.append(sum((x - actions[e[i]]) if actions[e[i]] >= y else 0.0
                          for x, y, i in zip(v[:t], m[:t], bins[:t])))
    totals = np.array(totals)
    w = np.exp(eta * (totals - totals.max()))
    w /= w.sum()
    out = np.zeros(M)
    i = bins[t]
    for e, p in zip(experts, w):
        out[e[i]] += p
    return out


# ---------------------------------------------------------------- ChEW


def chew_path_products(tree, rs) -> np.ndarray:
    """Leaf-plus-dummy distribution as products of Q's along explicit manager chains."""
    M = tree.M
    nL = len(tree.leaves)
    n_d = [len(tree.funcs[k]) for k in range(M)]
    off = np.cumsum([nL] + n_d)
    out = np.zeros(int(off[-1]))

    def walk(level: int, node: int, mass: float) -> None:
        q = rs.Q[level][node]
        lo = int(tree.child_lo[level][node])
        out[off[level] + node] += mass * q[-1]
        for i, qi in enumerate(q[:-1]):
            child = lo + i
            if level + 1 == M:
                out[child] += mass * qi
            else:
                walk(level + 1, child, mass * qi)

    walk(0, 0, 1.0)
    return out


def random_f0(rng, grid: np.ndarray) -> np.ndarray:
    """A random 1-Lipschitz f on ``grid`` with 0 <= f(v) <= v."""
    dx = np.diff(grid, prepend=0.0)
    slopes = rng.uniform(-1, 1, grid.size)
    mode = rng.integers(0, 3)
    if mode == 1:
        slopes = np.sign(slopes)
    f = np.cumsum(slopes * dx)
    f = f - f.min() + rng.uniform(-0.5, 0.5)
    return np.clip(np.minimum(f, grid), 0.0, None)
