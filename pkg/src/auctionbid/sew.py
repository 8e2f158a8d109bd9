"""Successive exponential weighting: the O(T)-space, O(sqrt T)-per-round bidder.

Levels are 1-based in the public API (``level=1..L``) and bins, regular
experts and groups are 1-based in docstrings; arrays are stored 0-based with
level ``l`` at list position ``l - 1``.

Per level ``l`` the value range (0, 1] is cut into ``M_l = 2^(l+1)`` bins.
Each bin holds ``U_l = 2^(l+1) - 1`` regular experts, expert ``u`` mixing
over bids in ((u-1) 2^(-l-1), (u+1) 2^(-l-1)], and ``W_l = 2^l - 1`` dummy
experts, dummy ``w`` bidding 2^(-l) (w+1). Group ``w`` of a bin is the
four-way choice (regular 2w-1, 2w, 2w+1, dummy w).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import Policy, RoundOutcome, bin_index, reward_array
from .ew import RATE_MODES, THEORETICAL, learning_rate, sample_index, softmax_rows

CHECKPOINT_VERSION = 1


class HorizonExceeded(RuntimeError):
    pass


class StaleScratch(RuntimeError):
    pass


def level_count(T: int) -> int:
    """floor(log2 sqrt(T)), computed in integers."""
    return (int(T).bit_length() - 1) // 2


@dataclass(frozen=True)
class SewConfig:
    T: int
    rate_mode: str = THEORETICAL
    clip_bids: bool = False

    def __post_init__(self) -> None:
        if self.T < 4:
            raise ValueError(f"SEW needs a horizon T >= 4 (got T={self.T}); smaller horizons leave no experts")
        if self.rate_mode not in RATE_MODES:
            raise ValueError(f"unknown learning-rate mode {self.rate_mode!r}")


@dataclass(frozen=True)
class SewGeometry:
    L: int

    @property
    def levels(self) -> range:
        return range(1, self.L + 1)

    def M(self, level: int) -> int:
        return 2 ** (level + 1)

    def U(self, level: int) -> int:
        return 2 ** (level + 1) - 1

    def W(self, level: int) -> int:
        return 2**level - 1

    def gap(self, level: int) -> float:
        return 2.0 ** (1 - level)

    def dummy_bid(self, level: int, w: int) -> float:
        return 2.0**-level * (w + 1)

    def dummy_bids(self, level: int) -> np.ndarray:
        return 2.0**-level * (np.arange(1, self.W(level) + 1) + 1)

    def leaf_bids(self) -> np.ndarray:
        """Deterministic bids 2^(-L-1) u of the last-level regular experts."""
        return 2.0 ** (-self.L - 1) * np.arange(1, self.U(self.L) + 1)

    def bin_interval(self, level: int, m: int) -> tuple[float, float]:
        M = self.M(level)
        return ((m - 1) / M, m / M)

    def expert_interval(self, level: int, u: int) -> tuple[float, float]:
        h = 2.0 ** (-level - 1)
        return (h * (u - 1), h * (u + 1))

    def cell_count(self) -> int:
        return sum(self.M(l) * (self.U(l) + self.W(l)) for l in self.levels)

    def ew_evaluations_per_round(self) -> int:
        return sum(self.W(l) for l in self.levels)


@dataclass
class SewLedger:
    visits: list[np.ndarray]
    R: list[np.ndarray]
    R_dummy: list[np.ndarray]
    round: int = 0
    pending: int | None = None
    flat: tuple = field(default=(), repr=False)

    def cell_count(self) -> int:
        return sum(r.size + d.size for r, d in zip(self.R, self.R_dummy))

    def bin_state(self, level: int, m: int) -> tuple[int, np.ndarray, np.ndarray]:
        i = level - 1
        return int(self.visits[i][m - 1]), self.R[i][m - 1], self.R_dummy[i][m - 1]


@dataclass
class RoundScratch:
    round: int
    bins: list[int]
    probs: list[np.ndarray]
    ew_evaluations: int = 0


def _offsets(sizes: list[int]) -> np.ndarray:
    return np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)


def sew_init(cfg: SewConfig) -> tuple[SewGeometry, SewLedger]:
    """Zeroed ledger; per-level arrays are views into three contiguous buffers."""
    geom = SewGeometry(level_count(cfg.T))
    lv = list(geom.levels)
    shapes_R = [(geom.M(l), geom.U(l)) for l in lv]
    shapes_D = [(geom.M(l), geom.W(l)) for l in lv]
    flat_R = np.zeros(sum(a * b for a, b in shapes_R))
    flat_D = np.zeros(sum(a * b for a, b in shapes_D))
    flat_V = np.zeros(sum(geom.M(l) for l in lv), dtype=np.int64)
    offR = _offsets([a * b for a, b in shapes_R])
    offD = _offsets([a * b for a, b in shapes_D])
    offV = _offsets([geom.M(l) for l in lv])
    ledger = SewLedger(
        visits=[flat_V[o : o + geom.M(l)] for o, l in zip(offV, lv)],
        R=[flat_R[o : o + a * b].reshape(a, b) for o, (a, b) in zip(offR, shapes_R)],
        R_dummy=[flat_D[o : o + a * b].reshape(a, b) for o, (a, b) in zip(offD, shapes_D)],
        flat=(flat_R, flat_D, flat_V, offR, offD, offV),
    )
    if not ledger.cell_count() == geom.cell_count() <= 8 * cfg.T:
        raise AssertionError("ledger exceeds the 8T cell budget")
    return geom, ledger


def _group_rewards(R_row: np.ndarray, Rd_row: np.ndarray) -> np.ndarray:
    """W x 4 matrix (R_{2w-1}, R_{2w}, R_{2w+1}, R'_w) for every group w."""
    out = np.empty((Rd_row.size, 4))
    out[:, 0] = R_row[0:-2:2]
    out[:, 1] = R_row[1:-1:2]
    out[:, 2] = R_row[2::2]
    out[:, 3] = Rd_row
    return out


def sew_weights(geom: SewGeometry, ledger: SewLedger, v: float, rate_mode: str = THEORETICAL) -> RoundScratch:
    """Step 1: locate the active bin per level, bump its visit count and compute its group weights."""
    if ledger.pending is not None:
        raise StaleScratch(f"round {ledger.pending} was weighted but never updated")
    bins, probs = [], []
    evals = 0
    for l in geom.levels:
        i = l - 1
        m = bin_index(v, geom.M(l))
        ledger.visits[i][m - 1] += 1
        eta = learning_rate(int(ledger.visits[i][m - 1]), geom.gap(l), 4, rate_mode)
        p = softmax_rows(_group_rewards(ledger.R[i][m - 1], ledger.R_dummy[i][m - 1]), eta)
        evals += p.shape[0]
        bins.append(m)
        probs.append(p)
    ledger.pending = ledger.round + 1
    return RoundScratch(round=ledger.pending, bins=bins, probs=probs, ew_evaluations=evals)


def sew_select_bid(geom: SewGeometry, scratch: RoundScratch, rng: np.random.Generator) -> float:
    """Step 2: top-down descent through the group weights.

    Exactly ``L`` uniforms are drawn per round whatever the stopping level,
    which keeps the stream aligned with the compiled :func:`sew_run`.
    """
    u = rng.random(geom.L)
    w = 1
    for l in geom.levels:
        s = sample_index(scratch.probs[l - 1][w - 1], u[l - 1]) + 1
        if s == 4:
            return geom.dummy_bid(l, w)
        if l < geom.L:
            w = 2 * (w - 1) + s
        else:
            return 2.0 ** (-geom.L - 1) * (2 * (w - 1) + s)
    raise AssertionError("descent fell through")


def sew_update(geom: SewGeometry, ledger: SewLedger, scratch: RoundScratch, v: float, m: float) -> float:
    """Step 3: bottom-up reward propagation into the active bins.

    Reuses the probability vectors of the same round. Returns the policy's
    expected payoff this round (the level-1 group mixture).
    """
    if ledger.pending is None or scratch.round != ledger.pending:
        raise StaleScratch(f"scratch for round {scratch.round} does not match pending round {ledger.pending}")
    r_child = d_child = None
    for l in reversed(geom.levels):
        i = l - 1
        b = scratch.bins[i] - 1
        r_dummy = reward_array(geom.dummy_bids(l), v, m)
        if l == geom.L:
            r = reward_array(geom.leaf_bids(), v, m)
        else:
            p = scratch.probs[i + 1]
            r = (
                p[:, 0] * r_child[0:-2:2]
                + p[:, 1] * r_child[1:-1:2]
                + p[:, 2] * r_child[2::2]
                + p[:, 3] * d_child
            )
        ledger.R[i][b] += r
        ledger.R_dummy[i][b] += r_dummy
        r_child, d_child = r, r_dummy
    p1 = scratch.probs[0][0]
    ledger.round = scratch.round
    ledger.pending = None
    return float(p1[0] * r_child[0] + p1[1] * r_child[1] + p1[2] * r_child[2] + p1[3] * d_child[0])


@dataclass
class SewState:
    cfg: SewConfig
    geom: SewGeometry
    ledger: SewLedger
    ew_evaluations: int = 0

    @classmethod
    def new(cls, cfg: SewConfig) -> "SewState":
        geom, ledger = sew_init(cfg)
        return cls(cfg, geom, ledger)


def sew_round(state: SewState, v: float, m: float, rng: np.random.Generator) -> RoundOutcome:
    """Weights, bid, reveal ``m``, update."""
    if state.ledger.round >= state.cfg.T:
        raise HorizonExceeded(f"horizon T={state.cfg.T} already played")
    scratch = sew_weights(state.geom, state.ledger, v, state.cfg.rate_mode)
    state.ew_evaluations += scratch.ew_evaluations
    bid = sew_select_bid(state.geom, scratch, rng)
    if state.cfg.clip_bids:
        bid = min(bid, v)
    expected = sew_update(state.geom, state.ledger, scratch, v, m)
    return RoundOutcome.settle(bid, v, m, None if state.cfg.clip_bids else expected)


class SewPolicy(Policy):
    name = "sew"

    def __init__(self, cfg: SewConfig, rng: np.random.Generator):
        self.state = SewState.new(cfg)
        self.rng = rng
        self._scratch: RoundScratch | None = None
        self._bid: float | None = None

    def next_bid(self, v: float) -> float:
        st = self.state
        if st.ledger.round >= st.cfg.T:
            raise HorizonExceeded(f"horizon T={st.cfg.T} already played")
        self._scratch = sew_weights(st.geom, st.ledger, v, st.cfg.rate_mode)
        st.ew_evaluations += self._scratch.ew_evaluations
        bid = sew_select_bid(st.geom, self._scratch, self.rng)
        self._bid = min(bid, v) if st.cfg.clip_bids else bid
        return self._bid

    def observe(self, v: float, m: float) -> RoundOutcome:
        if self._scratch is None:
            raise StaleScratch("observe() called before next_bid()")
        expected = sew_update(self.state.geom, self.state.ledger, self._scratch, v, m)
        self._scratch = None
        return RoundOutcome.settle(self._bid, v, m, None if self.state.cfg.clip_bids else expected)


def save_checkpoint(policy: SewPolicy, path: str | Path) -> None:
    """Versioned ``.npz`` dump of config, ledger, round index and RNG state."""
    st = policy.state
    if st.ledger.pending is not None:
        raise StaleScratch("cannot checkpoint in the middle of a round")
    header = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(st.cfg),
        "round": st.ledger.round,
        "ew_evaluations": st.ew_evaluations,
        "rng": policy.rng.bit_generator.state,
        "rng_class": type(policy.rng.bit_generator).__name__,
    }
    arrays = {"header": np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)}
    for l in st.geom.levels:
        arrays[f"visits_{l}"] = st.ledger.visits[l - 1]
        arrays[f"R_{l}"] = st.ledger.R[l - 1]
        arrays[f"Rd_{l}"] = st.ledger.R_dummy[l - 1]
    with Path(path).open("wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str | Path) -> SewPolicy:
    with np.load(Path(path)) as z:
        header = json.loads(bytes(z["header"]).decode())
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')!r}")
        cfg = SewConfig(**header["config"])
        bitgen = getattr(np.random, header["rng_class"])()
        bitgen.state = header["rng"]
        policy = SewPolicy(cfg, np.random.Generator(bitgen))
        led = policy.state.ledger
        for l in policy.state.geom.levels:
            led.visits[l - 1][:] = z[f"visits_{l}"]
            led.R[l - 1][:] = z[f"R_{l}"]
            led.R_dummy[l - 1][:] = z[f"Rd_{l}"]
        led.round = int(header["round"])
        policy.state.ew_evaluations = int(header["ew_evaluations"])
    return policy


@dataclass
class SewRun:
    bids: np.ndarray
    payoffs: np.ndarray
    expected: np.ndarray
    ew_evaluations: int


def sew_run(state: SewState, trace, rng: np.random.Generator) -> SewRun:
    """Play a whole trace with the compiled loop, continuing from ``state``.

    Consumes ``rng`` exactly like repeated :func:`sew_round` calls.
    """
    from ._sew_kernel import sew_kernel

    v = np.ascontiguousarray(trace.v, dtype=float)
    m = np.ascontiguousarray(trace.m, dtype=float)
    T = v.size
    led = state.ledger
    if led.pending is not None:
        raise StaleScratch("a round is in progress")
    if led.round + T > state.cfg.T:
        raise HorizonExceeded(f"{T} rounds from round {led.round} exceed horizon T={state.cfg.T}")
    uniforms = rng.random((T, state.geom.L))
    bids, payoffs, expected = np.empty(T), np.empty(T), np.empty(T)
    flat_R, flat_D, flat_V, offR, offD, offV = led.flat
    evals = sew_kernel(v, m, uniforms, state.geom.L, flat_R, flat_D, flat_V, offR, offD, offV,
                       state.cfg.rate_mode != THEORETICAL, state.cfg.clip_bids, bids, payoffs, expected)
    led.round += T
    state.ew_evaluations += int(evals)
    return SewRun(bids, payoffs, expected, int(evals))
