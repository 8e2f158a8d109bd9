"""Domain types, the first-price reward, bin indexing and trace I/O."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PROB_ATOL = 1e-12


class TraceError(ValueError):
    """Raised for malformed or degenerate auction traces."""


def reward(b: float, v: float, m: float) -> float:
    """Utility of bidding ``b`` with value ``v`` against highest other bid ``m``.

    Ties ``b == m`` count as a win.
    """
    return (v - b) if b >= m else 0.0


def reward_array(b, v, m) -> np.ndarray:
    """Vectorized :func:`reward`; arguments broadcast."""
    b = np.asarray(b, dtype=float)
    return np.where(b >= m, v - b, 0.0)


def bin_index(v: float, M: int) -> int:
    """1-based index of the bin ((k-1)/M, k/M] containing ``v``."""
    if M < 1:
        raise ValueError(f"bin count must be >= 1, got {M}")
    if not (0.0 < v <= 1.0):
        raise ValueError(f"value must lie in (0, 1], got {v!r}")
    k = math.ceil(M * v)
    # M*v can round across an integer; correct against the exact interval test.
    if k > 1 and v <= (k - 1) / M:
        k -= 1
    elif k < M and v > k / M:
        k += 1
    return min(max(k, 1), M)


@dataclass(frozen=True)
class RoundOutcome:
    bid: float
    won: bool
    payoff: float
    # Expected payoff under the policy's own randomization, when it is cheap to know.
    expected_payoff: float | None = None

    @classmethod
    def settle(cls, bid: float, v: float, m: float, expected_payoff: float | None = None) -> "RoundOutcome":
        won = bid >= m
        return cls(bid=bid, won=won, payoff=(v - bid) if won else 0.0, expected_payoff=expected_payoff)


@dataclass
class AuctionTrace:
    """An oblivious adversarial sequence of (value, highest other bid) pairs.

    ``value_rank`` optionally carries the exact ordering of the values (dense
    ranks, equal values share a rank) when the floats cannot represent it, as
    for the monotone-killer construction whose value increments fall below
    double precision after ~50 rounds. Oracles sort by it when present.
    """

    v: np.ndarray
    m: np.ndarray
    scale: float = 1.0
    value_rank: np.ndarray | None = None
    dropped: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.v = np.asarray(self.v, dtype=float)
        self.m = np.asarray(self.m, dtype=float)
        if self.v.shape != self.m.shape or self.v.ndim != 1:
            raise TraceError("v and m must be 1-d arrays of equal length")
        if self.v.size and not (np.all(self.v > 0) and np.all(self.v <= 1)):
            raise TraceError("values must lie in (0, 1]")
        if self.m.size and not (np.all(self.m >= 0) and np.all(self.m <= 1)):
            raise TraceError("highest other bids must lie in [0, 1]")
        if self.value_rank is not None:
            self.value_rank = np.asarray(self.value_rank, dtype=np.int64)
            if self.value_rank.shape != self.v.shape:
                raise TraceError("value_rank must match trace length")

    @property
    def T(self) -> int:
        return int(self.v.size)

    def __len__(self) -> int:
        return self.T

    def __iter__(self):
        return zip(self.v.tolist(), self.m.tolist())

    def order_key(self) -> np.ndarray:
        return self.value_rank if self.value_rank is not None else self.v

    def head(self, n: int) -> "AuctionTrace":
        rank = None if self.value_rank is None else self.value_rank[:n]
        return AuctionTrace(self.v[:n], self.m[:n], self.scale, rank, self.dropped, dict(self.meta))


def normalize_trace(raw: Sequence[tuple[float, float]]) -> AuctionTrace:
    """Scale raw positive (value, bid) pairs into (0, 1] by their common maximum."""
    if len(raw) == 0:
        raise TraceError("empty trace")
    arr = np.asarray(raw, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise TraceError("expected a list of (v, m) pairs")
    if not np.all(np.isfinite(arr)):
        raise TraceError("trace contains non-finite entries")
    if np.any(arr <= 0):
        raise TraceError("trace entries must be strictly positive")
    scale = float(arr.max())
    return AuctionTrace(arr[:, 0] / scale, arr[:, 1] / scale, scale=scale)


def read_trace_csv(path: str | Path, prune_unwinnable: bool = False) -> AuctionTrace:
    """Parse a ``v,m`` CSV trace.

    Values already inside (0, 1] are taken as-is, anything larger triggers
    normalization by the overall maximum. Rounds with ``v <= 0`` are dropped
    (bidding zero is optimal there), as are ``v <= m`` rounds when
    ``prune_unwinnable``; the drop count is kept on the trace.
    """
    path = Path(path)
    rows: list[tuple[float, float]] = []
    dropped = 0
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["v", "m"]:
            raise TraceError(f"{path}: line 1: expected header 'v,m'")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise TraceError(f"{path}: line {lineno}: expected 2 fields, got {len(row)}")
            try:
                v, m = float(row[0]), float(row[1])
            except ValueError:
                raise TraceError(f"{path}: line {lineno}: cannot parse {','.join(row)!r}") from None
            if not (math.isfinite(v) and math.isfinite(m)) or m < 0:
                raise TraceError(f"{path}: line {lineno}: invalid entry {','.join(row)!r}")
            if v <= 0 or (prune_unwinnable and v <= m):
                dropped += 1
                continue
            rows.append((v, m))
    if not rows:
        raise TraceError(f"{path}: empty trace")
    arr = np.asarray(rows, dtype=float)
    scale = float(arr.max())
    if scale > 1.0:
        arr = arr / scale
    else:
        scale = 1.0
    return AuctionTrace(arr[:, 0], arr[:, 1], scale=scale, dropped=dropped)


def write_trace_csv(trace: AuctionTrace, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["v", "m"])
        for v, m in trace:
            w.writerow([repr(v), repr(m)])


class Policy:
    """Shared bidding-policy interface.

    The round loop calls :meth:`next_bid` with the current value and only
    afterwards reveals ``m`` through :meth:`observe`.
    """

    name = "policy"

    def next_bid(self, v: float) -> float:
        raise NotImplementedError

    def observe(self, v: float, m: float) -> RoundOutcome:
        raise NotImplementedError


def play(policy: Policy, trace: AuctionTrace | Iterable[tuple[float, float]]) -> list[RoundOutcome]:
    """Run ``policy`` round by round over ``trace`` under full-information feedback."""
    out = []
    for v, m in trace:
        policy.next_bid(v)
        out.append(policy.observe(v, m))
    return out
