"""Exponential weighting with a gap-aware, shrinking learning rate."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import PROB_ATOL

THEORETICAL = "theoretical"
EMPIRICAL = "empirical"
RATE_MODES = (THEORETICAL, EMPIRICAL)


def learning_rate(t: int, gap: float, K: int, mode: str = THEORETICAL) -> float:
    """min{1/4, sqrt(ln K / (t * gap))}, or 5 / sqrt(t * gap) in empirical mode."""
    if t < 1:
        raise ValueError(f"visit count must be >= 1, got {t}")
    if not gap > 0:
        raise ValueError(f"gap must be positive, got {gap}")
    if K < 2:
        raise ValueError(f"need at least 2 experts, got {K}")
    if mode == THEORETICAL:
        return min(0.25, math.sqrt(math.log(K) / (t * gap)))
    if mode == EMPIRICAL:
        return 5.0 / math.sqrt(t * gap)
    raise ValueError(f"unknown learning-rate mode {mode!r}")


@dataclass(frozen=True)
class EwInput:
    rewards: np.ndarray
    t: int
    gap: float

    def __post_init__(self) -> None:
        r = np.asarray(self.rewards, dtype=float)
        object.__setattr__(self, "rewards", r)
        if r.ndim != 1 or r.size < 2:
            raise ValueError("rewards must be a vector of at least 2 entries")
        if self.t < 1:
            raise ValueError("visit count must be >= 1")
        if not self.gap > 0:
            raise ValueError("gap must be positive")

    @property
    def K(self) -> int:
        return int(self.rewards.size)


def softmax_rows(R: np.ndarray, eta) -> np.ndarray:
    """Row-wise softmax of ``eta * R`` with max-subtraction; ``eta`` scalar or per-row."""
    R = np.asarray(R, dtype=float)
    if not np.all(np.isfinite(R)):
        raise ValueError("rewards must be finite")
    eta = np.asarray(eta, dtype=float)
    if eta.ndim == 1:
        eta = eta[:, None]
    z = eta * R
    z = z - z.max(axis=-1, keepdims=True)
    w = np.exp(z)
    return w / w.sum(axis=-1, keepdims=True)


def ew_probabilities(inp: EwInput, mode: str = THEORETICAL) -> np.ndarray:
    eta = learning_rate(inp.t, inp.gap, inp.K, mode)
    return softmax_rows(inp.rewards, eta)


def is_prob_vector(p: np.ndarray) -> bool:
    p = np.asarray(p)
    return bool(np.all(p >= 0) and abs(p.sum() - 1.0) <= PROB_ATOL)


def ew_sample(p: np.ndarray, rng: np.random.Generator) -> int:
    """0-based index drawn by inverse CDF from one uniform of ``rng``."""
    return sample_index(p, rng.random())


def sample_index(p: np.ndarray, u: float) -> int:
    c = np.cumsum(p)
    idx = int(np.searchsorted(c, u * c[-1], side="right"))
    # Guard against cumulative round-off and zero-mass tails.
    idx = min(idx, len(p) - 1)
    while p[idx] <= 0 and idx > 0:
        idx -= 1
    return idx


@dataclass
class EwRun:
    choices: np.ndarray
    probabilities: np.ndarray
    realized_reward: float
    expected_reward: float
    best_expert: int
    best_reward: float

    @property
    def regret(self) -> float:
        """Best column in hindsight minus the policy's expected reward."""
        return self.best_reward - self.expected_reward

    @property
    def realized_regret(self) -> float:
        return self.best_reward - self.realized_reward

    def dump_csv(self, rewards: np.ndarray, path: str | Path) -> None:
        """Per-round choice and instantaneous (pseudo-)regret against the best expert."""
        inst = rewards[:, self.best_expert] - np.einsum("tk,tk->t", self.probabilities, rewards)
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "choice", "inst_regret"])
            for t, (c, r) in enumerate(zip(self.choices.tolist(), inst.tolist()), start=1):
                w.writerow([t, c + 1, repr(r)])


def ew_run(rewards, gap: float, rng: np.random.Generator, mode: str = THEORETICAL) -> EwRun:
    """Full-information EW over a T x K reward matrix.

    Round ``t`` (1-based) plays softmax(eta_t * sum_{s<t} r_s). The rewards
    are oblivious, so all T probability vectors are computed in one batch.
    """
    rewards = np.asarray(rewards, dtype=float)
    if rewards.ndim != 2:
        raise ValueError("reward matrix must be 2-d (ragged input?)")
    T, K = rewards.shape
    totals = rewards.sum(axis=0)
    best = int(np.argmax(totals))
    if K == 1:
        choices = np.zeros(T, dtype=np.int64)
        total = float(totals[0])
        return EwRun(choices, np.ones((T, 1)), total, total, 0, total)
    cum = np.vstack([np.zeros((1, K)), np.cumsum(rewards, axis=0)[:-1]])
    t = np.arange(1, T + 1)
    if mode == THEORETICAL:
        eta = np.minimum(0.25, np.sqrt(math.log(K) / (t * gap)))
    else:
        eta = np.array([learning_rate(int(s), gap, K, mode) for s in t])
    probs = softmax_rows(cum, eta)
    u = rng.random(T)
    c = np.cumsum(probs, axis=1)
    choices = np.minimum((c <= (u * c[:, -1])[:, None]).sum(axis=1), K - 1)
    rows = np.arange(T)
    realized = float(rewards[rows, choices].sum())
    expected = float(np.einsum("tk,tk->", probs, rewards))
    return EwRun(choices, probs, realized, expected, best, float(totals[best]))


def good_expert_bound(T: int, gap: float, K: int) -> float:
    """4 sqrt(T gap ln K) + 32 (4 + ln T) ln K."""
    return 4 * math.sqrt(T * gap * math.log(K)) + 32 * (4 + math.log(T)) * math.log(K)
