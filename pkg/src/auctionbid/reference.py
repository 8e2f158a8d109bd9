"""Reference-scale chaining machinery: Lipschitz brackets, ChEW, and the single-level product policy.

These exist to cross-check SEW on small horizons; ChEW is exponential in
the number of levels and is capped at three.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .core import Policy, RoundOutcome, bin_index, reward_array
from .ew import THEORETICAL, learning_rate, sample_index, softmax_rows
from .sew import level_count

MAX_BRACKET_STEPS = 8
MAX_CHEW_LEVELS = 3


# ---------------------------------------------------------------- brackets


@dataclass
class LipschitzBracket:
    """Knot-grid piecewise-linear members of F0 at resolution ``eps``.

    ``units[i, k]`` is f_i(k eps) / eps, an integer; rows are sorted
    lexicographically. Values are exact dyadic floats.
    """

    eps: Fraction
    units: np.ndarray

    @property
    def n_knots(self) -> int:
        return self.units.shape[1]

    @property
    def knots(self) -> np.ndarray:
        return np.arange(self.n_knots) * float(self.eps)

    @property
    def values(self) -> np.ndarray:
        return self.units * float(self.eps)

    def __len__(self) -> int:
        return self.units.shape[0]

    def evaluate(self, v) -> np.ndarray:
        """All members at the points ``v``: array (len(self), len(v))."""
        v = np.atleast_1d(np.asarray(v, dtype=float))
        return np.stack([np.interp(v, self.knots, row) for row in self.values])

    def to_text(self) -> str:
        head = f"eps={self.eps} members={len(self)}"
        return "\n".join([head] + [" ".join(map(str, row)) for row in self.units.tolist()]) + "\n"


def _paths(n: int) -> list[tuple[int, ...]]:
    out: list[tuple[int, ...]] = []

    def rec(path: list[int]) -> None:
        if len(path) == n + 1:
            out.append(tuple(path))
            return
        for step in (-1, 0, 1):
            nxt = path[-1] + step
            if nxt >= 0:
                path.append(nxt)
                rec(path)
                path.pop()

    rec([0])
    return out


def build_bracket(eps) -> LipschitzBracket:
    """Enumerate knot paths from f(0) = 0 with steps in {-eps, 0, +eps}, staying >= 0.

    Steps of at most one unit per knot give both 1-Lipschitzness and
    f(k eps) <= k eps, so every member lies in F0.
    """
    eps = Fraction(eps)
    if eps <= 0 or eps > 1:
        raise ValueError(f"bracket radius must lie in (0, 1], got {eps}")
    n = 1 / eps
    if n.denominator != 1 or n.numerator & (n.numerator - 1):
        raise ValueError(f"bracket radius must be a dyadic 2^-k, got {eps}")
    n = int(n)
    if n > MAX_BRACKET_STEPS:
        raise ValueError(f"eps = {eps} is below the enumeration budget (1/eps <= {MAX_BRACKET_STEPS})")
    units = np.array(sorted(_paths(n)), dtype=np.int64)
    return LipschitzBracket(eps, units)


def upper_bracket_units(f_knots: np.ndarray, eps: float) -> np.ndarray:
    """Bracket member h with h - 2 eps <= f <= h for 1-Lipschitz f in F0 (given at the knots)."""
    a = np.asarray(f_knots, dtype=float) / eps
    k = np.arange(a.size)
    return np.minimum(k, np.ceil(a + 0.5)).astype(np.int64)


def find_member(bracket: LipschitzBracket, units: np.ndarray) -> int:
    hits = np.flatnonzero((bracket.units == units).all(axis=1))
    return int(hits[0]) if hits.size else -1


# ---------------------------------------------------------------- ChEW


def chew_gaps(M: int) -> np.ndarray:
    """Delta_m = 2 sum_{r=m}^{M-1} 2^-r for m = 0..M."""
    return np.array([2 * sum(2.0**-r for r in range(m, M)) for m in range(M + 1)])


@dataclass
class ChewTree:
    """Chained expert tree; levels 0..M with one root at level 0.

    ``funcs[m]`` holds the knot values of the level-m nodes (reordered so
    that every node's children, and hence its descendant leaves, are
    contiguous). ``child_lo/child_hi[m][k]`` bound the children of node k
    at level m + 1 and ``leaf_lo/leaf_hi[m][k]`` its descendant leaves.
    """

    T: int
    M: int
    eps: list[Fraction]
    funcs: list[np.ndarray]
    parent: list[np.ndarray]
    child_lo: list[np.ndarray]
    child_hi: list[np.ndarray]
    leaf_lo: list[np.ndarray]
    leaf_hi: list[np.ndarray]
    gaps: np.ndarray
    log_card: np.ndarray
    r_node: list[np.ndarray]
    r_dummy: list[np.ndarray]
    t: int = 0
    pruned: int = 0
    rate_mode: str = THEORETICAL
    # Per level m: (segment starts, sizes, gather index) laying out every manager's
    # (children..., dummy) block in one flat array over concat(children, dummies).
    segments: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = field(default_factory=list)

    @property
    def leaves(self) -> np.ndarray:
        return self.funcs[self.M]

    def knots(self, m: int) -> np.ndarray:
        return np.arange(self.funcs[m].shape[1]) * float(self.eps[m])

    def leaf_values(self, v: float) -> np.ndarray:
        F = self.leaves
        x = v * (F.shape[1] - 1)
        k = min(int(x), F.shape[1] - 2)
        w = x - k
        return F[:, k] * (1 - w) + F[:, k + 1] * w

    def dummy_values(self, m: int, leaf_vals: np.ndarray) -> np.ndarray:
        """f_m*(v) for every level-m manager: max over its descendant leaves."""
        return np.maximum.reduceat(leaf_vals, self.leaf_lo[m])

    def employees(self, m: int, k: int) -> int:
        return int(self.child_hi[m][k] - self.child_lo[m][k]) + 1

    def eta(self, m: int, t: int) -> float:
        """min{1/4, sqrt(C_m / (t Delta_m))} with C_m the largest ln|C(f_m)| at level m."""
        if self.rate_mode == THEORETICAL:
            return min(0.25, math.sqrt(self.log_card[m] / (t * self.gaps[m])))
        return 5.0 / math.sqrt(t * self.gaps[m])

    def to_text(self) -> str:
        lines = [f"T={self.T} M={self.M}"]
        for m in range(self.M + 1):
            lines.append(f"level {m} eps={self.eps[m]} nodes={len(self.funcs[m])}")
            units = np.rint(self.funcs[m] / float(self.eps[m]) if m else self.funcs[m]).astype(int)
            for k, row in enumerate(units.tolist()):
                par = "-" if m == 0 else str(int(self.parent[m][k]))
                lines.append(f"  {k} parent={par} " + " ".join(map(str, row)))
        return "\n".join(lines) + "\n"


def _sup_dist(fine: np.ndarray, coarse: np.ndarray, ratio: int) -> np.ndarray:
    """Sup-norm distances between PL functions, the coarse grid refining by ``ratio``."""
    n = fine.shape[1]
    x = np.arange(n) / ratio
    xc = np.arange(coarse.shape[1])
    up = np.stack([np.interp(x, xc, row) for row in coarse])
    return np.abs(fine[:, None, :] - up[None, :, :]).max(axis=2)


def chew_init(T: int, M_max: int = MAX_CHEW_LEVELS, rate_mode: str = THEORETICAL) -> ChewTree:
    if not 1 <= M_max <= MAX_CHEW_LEVELS:
        raise ValueError(f"M_max must lie in 1..{MAX_CHEW_LEVELS}, got {M_max}")
    if T < 4:
        raise ValueError("ChEW needs T >= 4")
    M = min(level_count(T), M_max)
    eps = [Fraction(1, 2**m) for m in range(M + 1)]
    # Level 0 is the single bidder node; its knot values are irrelevant (use zero).
    raw = [np.zeros((1, 2))] + [build_bracket(eps[m]).values for m in range(1, M + 1)]
    parent = [np.zeros(1, dtype=np.int64)]
    for m in range(1, M + 1):
        d = _sup_dist(raw[m], raw[m - 1], 2)
        parent.append(np.argmin(d, axis=1))  # first minimum = lexicographically smallest manager
    # Drop inner nodes without descendant leaves (their mixture would be empty).
    keep = [np.ones(len(r), dtype=bool) for r in raw]
    pruned = 0
    for m in range(M - 1, 0, -1):
        has = np.zeros(len(raw[m]), dtype=bool)
        has[parent[m + 1][keep[m + 1]]] = True
        pruned += int((keep[m] & ~has).sum())
        keep[m] &= has
    # Hierarchical reorder: sort each level by (parent position, own index).
    order = [np.array([0])]
    pos = [np.zeros(1, dtype=np.int64)]
    for m in range(1, M + 1):
        idx = np.flatnonzero(keep[m])
        ppos = pos[m - 1][parent[m][idx]]
        o = idx[np.lexsort((idx, ppos))]
        order.append(o)
        p = np.full(len(raw[m]), -1, dtype=np.int64)
        p[o] = np.arange(len(o))
        pos.append(p)
    funcs = [raw[m][order[m]] for m in range(M + 1)]
    par = [np.zeros(1, dtype=np.int64)] + [pos[m - 1][parent[m][order[m]]] for m in range(1, M + 1)]
    child_lo, child_hi, leaf_lo, leaf_hi = [], [], [], []
    for m in range(M):
        n = len(funcs[m])
        lo = np.searchsorted(par[m + 1], np.arange(n), side="left")
        hi = np.searchsorted(par[m + 1], np.arange(n), side="right")
        child_lo.append(lo)
        child_hi.append(hi)
    for m in range(M):
        # Map each leaf to its level-m ancestor, then take contiguous ranges.
        anc = np.arange(len(funcs[M]))
        for lev in range(M, m, -1):
            anc = par[lev][anc]
        n = len(funcs[m])
        leaf_lo.append(np.searchsorted(anc, np.arange(n), side="left"))
        leaf_hi.append(np.searchsorted(anc, np.arange(n), side="right"))
    log_card = np.array([
        math.log(max(int((child_hi[m] - child_lo[m]).max()) + 1, 2)) for m in range(M)
    ] + [0.0])
    tree = ChewTree(
        T=T, M=M, eps=eps, funcs=funcs, parent=par,
        child_lo=child_lo, child_hi=child_hi, leaf_lo=leaf_lo, leaf_hi=leaf_hi,
        gaps=chew_gaps(M), log_card=log_card,
        r_node=[np.zeros(len(f)) for f in funcs],
        r_dummy=[np.zeros(len(funcs[m])) for m in range(M)],
        pruned=pruned, rate_mode=rate_mode,
    )
    if any((hi <= lo).any() for lo, hi in zip(child_lo, child_hi)):
        raise RuntimeError("ChEW tree has a manager without children")
    for m in range(M):
        lo, hi = child_lo[m], child_hi[m]
        starts = np.concatenate([[0], np.cumsum(hi - lo + 1)[:-1]])
        n_child = len(funcs[m + 1])
        gather = np.concatenate([np.append(np.arange(a, b), n_child + k)
                                 for k, (a, b) in enumerate(zip(lo.tolist(), hi.tolist()))])
        tree.segments.append((starts, hi - lo + 1, gather))
    return tree


@dataclass
class ChewRoundState:
    """One round's weights; ``flat[m]`` concatenates every level-m manager's Q block."""

    t: int
    flat: list[np.ndarray]
    starts: list[np.ndarray]
    leaf_vals: np.ndarray
    dummy_vals: list[np.ndarray]
    _Q: list[list[np.ndarray]] | None = None

    @property
    def Q(self) -> list[list[np.ndarray]]:
        """Q[m][k]: the distribution of manager k at level m over (children..., dummy)."""
        if self._Q is None:
            self._Q = [np.split(f, s[1:]) for f, s in zip(self.flat, self.starts)]
        return self._Q

    def q(self, m: int, k: int) -> np.ndarray:
        if self._Q is not None:
            return self._Q[m][k]
        s = self.starts[m]
        end = s[k + 1] if k + 1 < s.size else self.flat[m].size
        return self.flat[m][s[k]:end]


def chew_weights(tree: ChewTree, v: float) -> ChewRoundState:
    """Q_{t, f_m} for every manager: softmax over (children..., dummy)."""
    t = tree.t + 1
    leaf_vals = tree.leaf_values(v)
    dummy_vals = [tree.dummy_values(m, leaf_vals) for m in range(tree.M)]
    flat = []
    for m in range(tree.M):
        starts, sizes, gather = tree.segments[m]
        z = tree.eta(m, t) * np.concatenate([tree.r_node[m + 1], tree.r_dummy[m]])[gather]
        w = np.exp(z - np.repeat(np.maximum.reduceat(z, starts), sizes))
        w /= np.repeat(np.add.reduceat(w, starts), sizes)
        flat.append(w)
    return ChewRoundState(t, flat, [seg[0] for seg in tree.segments], leaf_vals, dummy_vals)


def chew_leaf_distribution(tree: ChewTree, rs: ChewRoundState) -> tuple[np.ndarray, list[np.ndarray]]:
    """P_{t, f_0} over the extended expert set by the bottom-up mixture.

    Returns (P_leaves, [P_dummy_level_m ...]); together they sum to one.
    """
    M = tree.M
    nL = len(tree.leaves)
    # P[node] as dense rows over leaves + all dummies.
    n_d = [len(tree.funcs[m]) for m in range(M)]
    off = np.cumsum([nL] + n_d)
    width = int(off[-1])
    P = np.eye(nL, width)
    for m in range(M - 1, -1, -1):
        newP = np.zeros((len(tree.funcs[m]), width))
        for k, (lo, hi) in enumerate(zip(tree.child_lo[m].tolist(), tree.child_hi[m].tolist())):
            q = rs.Q[m][k]
            newP[k] = q[:-1] @ P[lo:hi]
            newP[k, off[m] + k] += q[-1]
        P = newP
    root = P[0]
    return root[:nL], [root[off[m]:off[m + 1]] for m in range(M)]


def chew_select_bid(tree: ChewTree, rs: ChewRoundState, rng: np.random.Generator) -> float:
    k = 0
    for m in range(tree.M):
        q = rs.q(m, k)
        i = sample_index(q, rng.random())
        if i == len(q) - 1:
            return float(rs.dummy_vals[m][k])
        k = int(tree.child_lo[m][k]) + i
    return float(rs.leaf_vals[k])


def chew_update(tree: ChewTree, rs: ChewRoundState, v: float, m_bid: float) -> float:
    """Add each employee's expected reward to its manager; returns the root's expected payoff."""
    V = reward_array(rs.leaf_vals, v, m_bid)
    for m in range(tree.M - 1, -1, -1):
        Vd = reward_array(rs.dummy_vals[m], v, m_bid)
        tree.r_node[m + 1] += V
        tree.r_dummy[m] += Vd
        starts, _, gather = tree.segments[m]
        q = rs.flat[m] if rs._Q is None else np.concatenate(rs._Q[m])
        V = np.add.reduceat(q * np.concatenate([V, Vd])[gather], starts)
    tree.t = rs.t
    return float(V[0])


def chew_round(tree: ChewTree, v: float, m: float, rng: np.random.Generator) -> RoundOutcome:
    if tree.t >= tree.T:
        raise RuntimeError(f"horizon T={tree.T} already played")
    rs = chew_weights(tree, v)
    bid = chew_select_bid(tree, rs, rng)
    expected = chew_update(tree, rs, v, m)
    return RoundOutcome.settle(bid, v, m, expected)


class ChewPolicy(Policy):
    name = "chew"

    def __init__(self, T: int, rng: np.random.Generator, M_max: int = MAX_CHEW_LEVELS,
                 rate_mode: str = THEORETICAL):
        self.tree = chew_init(T, M_max, rate_mode)
        self.rng = rng
        self._rs: ChewRoundState | None = None
        self._bid = 0.0

    def next_bid(self, v: float) -> float:
        self._rs = chew_weights(self.tree, v)
        self._bid = chew_select_bid(self.tree, self._rs, self.rng)
        return self._bid

    def observe(self, v: float, m: float) -> RoundOutcome:
        if self._rs is None:
            raise RuntimeError("observe() called before next_bid()")
        expected = chew_update(self.tree, self._rs, v, m)
        self._rs = None
        return RoundOutcome.settle(self._bid, v, m, expected)


# ---------------------------------------------------------------- product experts


FIXED_ETA = "fixed"
TIME_VARYING = "time_varying"


@dataclass
class ProductExpertState:
    """Per-bin EW over the action grid B = {1/M, ..., 1}."""

    M: int
    R: np.ndarray = field(init=False)
    visits: np.ndarray = field(init=False)
    eta_mode: str = TIME_VARYING
    eta: float | None = None

    def __post_init__(self) -> None:
        if self.M < 1:
            raise ValueError("bin count M must be >= 1")
        if self.eta_mode not in (FIXED_ETA, TIME_VARYING):
            raise ValueError(f"unknown eta mode {self.eta_mode!r}")
        if self.eta_mode == FIXED_ETA and not (self.eta and self.eta > 0):
            raise ValueError("fixed eta mode needs a positive eta")
        self.R = np.zeros((self.M, self.M))
        self.visits = np.zeros(self.M, dtype=np.int64)

    @property
    def actions(self) -> np.ndarray:
        return np.arange(1, self.M + 1) / self.M

    def probabilities(self, v: float) -> tuple[int, np.ndarray]:
        i = bin_index(v, self.M) - 1
        if self.M == 1:
            return i, np.ones(1)
        if self.eta_mode == FIXED_ETA:
            eta = self.eta
        else:
            eta = learning_rate(int(self.visits[i]) + 1, 1.0, self.M)
        return i, softmax_rows(self.R[i], eta)

    def update(self, i: int, v: float, m: float) -> None:
        self.R[i] += reward_array(self.actions, v, m)
        self.visits[i] += 1


def default_product_bins(T: int) -> int:
    return max(1, math.ceil(T ** (1 / 3) - 1e-9))


def product_round(state: ProductExpertState, v: float, m: float, rng: np.random.Generator) -> RoundOutcome:
    i, p = state.probabilities(v)
    bid = float(state.actions[sample_index(p, rng.random())])
    expected = float(p @ reward_array(state.actions, v, m))
    state.update(i, v, m)
    return RoundOutcome.settle(bid, v, m, expected)


class ProductPolicy(Policy):
    name = "product"

    def __init__(self, T: int, rng: np.random.Generator, M: int | None = None,
                 eta_mode: str = TIME_VARYING, eta: float | None = None):
        self.state = ProductExpertState(M or default_product_bins(T), eta_mode=eta_mode, eta=eta)
        self.rng = rng
        self._pending: tuple[int, np.ndarray] | None = None
        self._bid = 0.0

    def next_bid(self, v: float) -> float:
        self._pending = self.state.probabilities(v)
        self._bid = float(self.state.actions[sample_index(self._pending[1], self.rng.random())])
        return self._bid

    def observe(self, v: float, m: float) -> RoundOutcome:
        if self._pending is None:
            raise RuntimeError("observe() called before next_bid()")
        i, p = self._pending
        expected = float(p @ reward_array(self.state.actions, v, m))
        self.state.update(i, v, m)
        self._pending = None
        return RoundOutcome.settle(self._bid, v, m, expected)
