"""Windowed competitor policies: linear shading, nonlinear shading and distribution learning."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .core import Policy, RoundOutcome, reward_array

DEFAULT_STEP = 0.01
DEFAULT_THETA2 = tuple(np.arange(33) * 0.25)


def default_window(T: int) -> int:
    """One simulated day of a 30-day horizon."""
    return max(1, math.ceil(T / 30))


@dataclass
class WindowBuffer:
    capacity: int
    _v: deque = field(default_factory=deque, repr=False)
    _m: deque = field(default_factory=deque, repr=False)

    def __post_init__(self) -> None:
        if self.capacity < 1:
            raise ValueError("window capacity must be >= 1")
        self._v = deque(maxlen=self.capacity)
        self._m = deque(maxlen=self.capacity)

    def push(self, v: float, m: float) -> None:
        self._v.append(v)
        self._m.append(m)

    def __len__(self) -> int:
        return len(self._v)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return np.fromiter(self._v, float, len(self._v)), np.fromiter(self._m, float, len(self._m))

    @classmethod
    def of(cls, pairs, capacity: int | None = None) -> "WindowBuffer":
        pairs = list(pairs)
        w = cls(capacity or max(1, len(pairs)))
        for v, m in pairs:
            w.push(v, m)
        return w


def theta_grid(h: float) -> np.ndarray:
    n = int(round(1 / h))
    if n < 1 or abs(n * h - 1) > 1e-9:
        raise ValueError(f"grid step must divide 1, got {h}")
    return np.arange(n + 1) / n


def _window_profits(bids: np.ndarray, v: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Total windowed profit per candidate; ``bids`` has shape (n_candidates, n_rounds)."""
    return reward_array(bids, v[None, :], m[None, :]).sum(axis=1)


def linear_fit(window: WindowBuffer, h: float = DEFAULT_STEP) -> float:
    """theta on {0, h, ..., 1} maximizing sum r(theta v; v, m); ties to the smallest."""
    if len(window) == 0:
        return 0.0
    v, m = window.arrays()
    grid = theta_grid(h)
    profits = _window_profits(grid[:, None] * v[None, :], v, m)
    return float(grid[int(np.argmax(profits))])


def nonlinear_bid(theta1: float, theta2: float, v):
    """log(1 + theta1 theta2 v) / theta2, with the theta2 -> 0 limit theta1 v.

    Clamped to theta1 v so the shading bound survives float rounding.
    """
    if theta2 < 0 or not 0 <= theta1 <= 1:
        raise ValueError("need theta1 in [0, 1] and theta2 >= 0")
    if np.ndim(v) == 0:
        lin = theta1 * v
        return lin if theta2 == 0 else min(math.log1p(theta1 * theta2 * v) / theta2, lin)
    v = np.asarray(v, dtype=float)
    lin = theta1 * v
    return lin if theta2 == 0 else np.minimum(np.log1p(theta1 * theta2 * v) / theta2, lin)


def nonlinear_fit(window: WindowBuffer, h: float = DEFAULT_STEP,
                  theta2_grid=DEFAULT_THETA2) -> tuple[float, float]:
    """Grid pair maximizing windowed profit; ties to the lexicographically smallest (theta1, theta2)."""
    if len(window) == 0:
        return 0.0, 0.0
    v, m = window.arrays()
    g1 = theta_grid(h)
    g2 = np.asarray(sorted(theta2_grid), dtype=float)
    if g2.size == 0 or g2[0] < 0:
        raise ValueError("theta2 grid must be non-empty and non-negative")
    best, arg = -np.inf, (0.0, 0.0)
    for a in g1.tolist():
        bids = np.stack([nonlinear_bid(a, c, v) for c in g2.tolist()])
        prof = _window_profits(bids, v, m)
        j = int(np.argmax(prof))
        if prof[j] > best:
            best, arg = float(prof[j]), (a, float(g2[j]))
    return arg


@dataclass(frozen=True)
class EmpiricalBids:
    """Support and CDF of the highest other bids in a window."""

    support: np.ndarray
    cdf: np.ndarray

    @classmethod
    def of(cls, window: WindowBuffer) -> "EmpiricalBids":
        _, m = window.arrays()
        support, counts = np.unique(m, return_counts=True)
        return cls(support, np.cumsum(counts) / max(m.size, 1))

    def best_response(self, v: float) -> float:
        if self.support.size == 0:
            return 0.0
        payoff = (v - self.support) * self.cdf
        j = int(np.argmax(payoff))
        return float(self.support[j]) if payoff[j] > 0 else 0.0


def dist_learning_bid(window: WindowBuffer, v: float) -> float:
    """argmax over the empirical support s of (v - s) F(s); bid 0 if no positive value."""
    return EmpiricalBids.of(window).best_response(v)


class _WindowedPolicy(Policy):
    """Refit at every window boundary on the rounds of the previous window."""

    def __init__(self, window: int):
        self.window = WindowBuffer(window)
        self._seen = 0
        self._bid = 0.0

    def refit(self) -> None:
        raise NotImplementedError

    def bid_for(self, v: float) -> float:
        raise NotImplementedError

    def next_bid(self, v: float) -> float:
        self._bid = float(self.bid_for(v))
        return self._bid

    def observe(self, v: float, m: float) -> RoundOutcome:
        out = RoundOutcome.settle(self._bid, v, m)
        self.window.push(v, m)
        self._seen += 1
        if self._seen % self.window.capacity == 0:
            self.refit()
        return out


class LinearShading(_WindowedPolicy):
    name = "linear_shading"

    def __init__(self, window: int, h: float = DEFAULT_STEP):
        super().__init__(window)
        self.h = h
        self.theta = 0.0

    def refit(self) -> None:
        self.theta = linear_fit(self.window, self.h)

    def bid_for(self, v: float) -> float:
        return self.theta * v


class NonlinearShading(_WindowedPolicy):
    name = "nonlinear_shading"

    def __init__(self, window: int, h: float = DEFAULT_STEP, theta2_grid=DEFAULT_THETA2):
        super().__init__(window)
        self.h = h
        self.theta2_grid = tuple(theta2_grid)
        self.theta = (0.0, 0.0)

    def refit(self) -> None:
        self.theta = nonlinear_fit(self.window, self.h, self.theta2_grid)

    def bid_for(self, v: float) -> float:
        return nonlinear_bid(self.theta[0], self.theta[1], v)


class DistLearning(_WindowedPolicy):
    """Best response to the empirical distribution of the previous window's m."""

    name = "dist_learning"

    def __init__(self, window: int):
        super().__init__(window)
        self.dist = EmpiricalBids(np.zeros(0), np.zeros(0))

    def refit(self) -> None:
        self.dist = EmpiricalBids.of(self.window)

    def bid_for(self, v: float) -> float:
        return self.dist.best_response(v)
