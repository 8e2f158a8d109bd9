"""Trace and reward-matrix generators: iid regimes and two oblivious adversaries."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .core import AuctionTrace, TraceError, read_trace_csv

ENV_KINDS = ("iid", "monotone_killer", "goodexpert_lb", "replay")

# Value-dependent atom tiers of the ``discrete`` preset: (atoms, probabilities
# per value tercile). Higher values see higher competing bids.
DISCRETE_ATOMS = np.array([0.05, 0.15, 0.3, 0.45, 0.6])
DISCRETE_TIER_PROBS = np.array(
    [
        [0.55, 0.3, 0.15, 0.0, 0.0],
        [0.15, 0.35, 0.35, 0.15, 0.0],
        [0.0, 0.1, 0.3, 0.35, 0.25],
    ]
)

PRESETS = {
    "continuous": {
        "value": ("beta", 2.0, 2.0),
        "bid": ("beta", 2.0, 5.0),
        "correlation": "independent",
    },
    "discrete": {
        "value": ("beta", 2.0, 2.0),
        "bid": ("atoms_by_tier",),
        "correlation": "tiered",
    },
    "correlated": {
        # m = clip(0.1 + 0.5 v + 0.127 N(0,1)); corr(v, m) ~ 0.66 for Beta(2,2) values
        "value": ("beta", 2.0, 2.0),
        "bid": ("linear", 0.1, 0.5, 0.127),
        "correlation": "linear",
    },
}


@dataclass(frozen=True)
class EnvSpec:
    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ENV_KINDS:
            raise ValueError(f"unknown environment kind {self.kind!r}; expected one of {ENV_KINDS}")
        p = self.params
        if self.kind == "goodexpert_lb":
            gap = float(p.get("gap", 0.1))
            if not 0 < gap <= 0.25:
                raise ValueError(f"goodexpert_lb requires 0 < gap <= 1/4, got {gap}")
        if self.kind == "iid" and p.get("preset", "continuous") not in PRESETS:
            raise ValueError(f"unknown iid preset {p.get('preset')!r}; expected one of {sorted(PRESETS)}")
        if self.kind == "replay" and "path" not in p:
            raise ValueError("replay environment needs a 'path' parameter")


def _draw_values(spec: tuple, T: int, rng: np.random.Generator) -> np.ndarray:
    kind = spec[0]
    if kind == "beta":
        v = rng.beta(spec[1], spec[2], T)
    elif kind == "uniform":
        v = rng.random(T)
    else:
        raise ValueError(f"unsupported value distribution {spec!r}")
    # Exact zeros are measure-zero draws; keep the (0, 1] contract.
    return np.clip(v, np.finfo(float).tiny, 1.0)


def gen_iid(T: int, preset: str = "continuous", seed: int | np.random.SeedSequence = 0,
            value: tuple | None = None, bid: tuple | None = None) -> AuctionTrace:
    """Iid (value, highest-other-bid) rounds from a named preset.

    ``value`` / ``bid`` override the preset's distributions. Bid specs:
    ``("beta", a, b)`` independent of v; ``("atoms_by_tier",)`` value-tercile
    dependent atoms; ``("linear", c, rho, sigma)`` giving
    m = clip(c + rho v + sigma N(0, 1), 0, 1).
    """
    if T < 1:
        raise ValueError("T must be positive")
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}")
    cfg = PRESETS[preset]
    value = value or cfg["value"]
    bid = bid or cfg["bid"]
    rng = np.random.default_rng(seed)
    v = _draw_values(value, T, rng)
    kind = bid[0]
    if kind == "beta":
        m = rng.beta(bid[1], bid[2], T)
    elif kind == "atoms_by_tier":
        tier = np.minimum((v * 3).astype(int), 2)
        u = rng.random(T)
        cdf = np.cumsum(DISCRETE_TIER_PROBS, axis=1)[tier]
        idx = np.minimum((cdf <= u[:, None]).sum(axis=1), len(DISCRETE_ATOMS) - 1)
        m = DISCRETE_ATOMS[idx]
    elif kind == "linear":
        c, rho, sigma = bid[1:]
        if sigma < 0:
            raise ValueError("noise scale must be non-negative")
        m = np.clip(c + rho * v + sigma * rng.standard_normal(T), 0.0, 1.0)
    else:
        raise ValueError(f"unsupported bid distribution {bid!r}")
    meta = {"env": "iid", "preset": preset, "value": list(value), "bid": list(bid),
            "correlation": cfg["correlation"] if bid is cfg["bid"] else "custom"}
    return AuctionTrace(v, m, meta=meta)


def gen_monotone_killer(T: int, seed: int | np.random.SeedSequence = 0) -> AuctionTrace:
    """Adversary defeating every learner against the monotone oracle.

    v_1 = 1/2, m_t iid uniform on {0, 1/8}, and v_t = v_{t-1} +/- 2^(-t-1)
    (up after m_{t-1} = 0, down after 1/8). Values are tracked as exact
    rationals; the float values collapse after ~50 rounds, so the exact
    order is attached as ``value_rank``.
    """
    if T < 1:
        raise ValueError("T must be positive")
    rng = np.random.default_rng(seed)
    m = np.where(rng.random(T) < 0.5, 0.0, 0.125)
    exact = [Fraction(1, 2)]
    for t in range(2, T + 1):
        step = Fraction(1, 2 ** (t + 1))
        exact.append(exact[-1] + step if m[t - 2] == 0.0 else exact[-1] - step)
    v = np.array([float(x) for x in exact])
    order = sorted(range(T), key=exact.__getitem__)
    rank = np.empty(T, dtype=np.int64)
    rank[order] = np.arange(T)
    return AuctionTrace(v, m, value_rank=rank, meta={"env": "monotone_killer"})


def killer_oracle_reward(trace: AuctionTrace) -> float:
    """Reward of the proof's best monotone strategy, sum_t (v_t - m_t), summed exactly."""
    return float(sum(Fraction(v) - Fraction(m) for v, m in trace))


@dataclass
class ExpertRewardMatrix:
    rewards: np.ndarray
    good: int
    gap: float
    scenario: int
    delta: float
    branch: np.ndarray

    @property
    def T(self) -> int:
        return self.rewards.shape[0]

    @property
    def K(self) -> int:
        return self.rewards.shape[1]

    def good_expert_holds(self) -> bool:
        r = self.rewards
        return bool(np.all(r[:, [self.good]] >= r - self.gap))

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"r{k}" for k in range(1, self.K + 1)])
            for t, row in enumerate(self.rewards.tolist(), start=1):
                w.writerow([t] + [repr(x) for x in row])


def lb_branch_probabilities(gap: float) -> tuple[float, float, float]:
    """Probabilities of the all-but-one-ones, zero and Bernoulli branches."""
    return 0.5, (1 - 4 * gap) / (2 * (1 - 2 * gap)), gap / (1 - 2 * gap)


def lb_delta(T: int, K: int, gap: float) -> float:
    return math.sqrt(math.log(K) / (T * gap)) / 16


def lb_mean_rewards(K: int, gap: float, delta: float, scenario: int) -> np.ndarray:
    base = (1 - gap) / (2 * (1 - 2 * gap))
    p = np.full(K, 0.5 - delta)
    if scenario >= 2:
        p[scenario - 1] = 0.5 + delta
    means = base + gap / (1 - 2 * gap) * (p - 0.5)
    means[0] = base
    return means


def gen_goodexpert_lb(T: int, K: int, gap: float, scenario: int | None = None,
                      seed: int | np.random.SeedSequence = 0) -> ExpertRewardMatrix:
    """Expert-advice rewards from the minimax lower-bound mixture; expert 1 is gap-good.

    ``scenario`` in 1..K selects which expert's Bernoulli mean is raised by
    2*delta (scenario 1 raises none); ``None`` draws it uniformly from the seed.
    """
    if not 0 < gap <= 0.25:
        raise ValueError(f"gap must lie in (0, 1/4], got {gap}")
    if K < 2:
        raise ValueError("need K >= 2 experts")
    delta = lb_delta(T, K, gap)
    if delta > 0.25:
        raise ValueError(f"delta = {delta:.4f} exceeds 1/4; increase T * gap")
    rng = np.random.default_rng(seed)
    if scenario is None:
        scenario = int(rng.integers(1, K + 1))
    if not 1 <= scenario <= K:
        raise ValueError(f"scenario must lie in 1..{K}")
    probs = np.array(lb_branch_probabilities(gap))
    branch = np.minimum((np.cumsum(probs)[None, :] <= rng.random(T)[:, None]).sum(axis=1), 2)
    p = np.full(K - 1, 0.5 - delta)
    if scenario >= 2:
        p[scenario - 2] = 0.5 + delta
    bern = (rng.random((T, K - 1)) < p).astype(float)
    r = np.zeros((T, K))
    top = branch == 0
    r[top, 0] = 1 - gap
    r[top, 1:] = 1.0
    mixed = branch == 2
    r[mixed, 0] = 1 - gap
    r[mixed, 1:] = bern[mixed]
    return ExpertRewardMatrix(r, good=0, gap=gap, scenario=scenario, delta=delta, branch=branch)


def replay_csv(path: str | Path, prune_unwinnable: bool = False) -> AuctionTrace:
    trace = read_trace_csv(path, prune_unwinnable=prune_unwinnable)
    trace.meta.update({"env": "replay", "path": str(path)})
    return trace


def make_trace(env: EnvSpec, T: int, seed) -> AuctionTrace:
    """Trace for one experiment cell; ``seed`` is an int or SeedSequence."""
    p = env.params
    if env.kind == "iid":
        return gen_iid(T, p.get("preset", "continuous"), seed)
    if env.kind == "monotone_killer":
        return gen_monotone_killer(T, seed)
    if env.kind == "replay":
        trace = replay_csv(p["path"], bool(p.get("prune", False)))
        if T and trace.T > T:
            trace = trace.head(T)
        return trace
    raise TraceError(f"environment {env.kind!r} does not produce auction traces")
