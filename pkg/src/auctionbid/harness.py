"""Experiment configuration, orchestration and report emission."""

from __future__ import annotations

import csv
import json
import math
import os
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import DEFAULT_STEP, DistLearning, LinearShading, NonlinearShading, default_window
from .core import AuctionTrace, Policy
from .environments import EnvSpec, gen_goodexpert_lb, make_trace
from .ew import RATE_MODES, THEORETICAL, ew_run, good_expert_bound
from .oracle import ORACLE_CLASSES, default_grid, regret, run_oracle
from .reference import ChewPolicy, ProductPolicy
from .sew import SewConfig, SewState, sew_run

SCHEMA_VERSION = 1
POLICIES = ("sew", "chew", "product", "linear_shading", "nonlinear_shading", "dist_learning")
HIST_BINS = 100
THREADS_ENV = "AUCTIONBID_THREADS"

# Keys accepted in config files and as CLI flags.
CONFIG_KEYS = (
    "policy", "env", "preset", "path", "prune", "gap", "K", "scenario", "T", "seeds", "env_seed",
    "grid", "window", "rate_mode", "oracles", "theta_step", "theta2_max", "theta2_step", "out", "formats",
)


class ConfigError(ValueError):
    pass


def _split(s) -> list[str]:
    if isinstance(s, (list, tuple)):
        return [str(x) for x in s]
    return [x.strip() for x in str(s).split(",") if x.strip()]


@dataclass
class ExperimentConfig:
    policies: list[str]
    env: EnvSpec
    T: int
    seeds: list[int]
    grid: int | None = None
    window: int | None = None
    rate_mode: str = THEORETICAL
    oracles: list[str] = field(default_factory=lambda: list(ORACLE_CLASSES))
    theta_step: float = DEFAULT_STEP
    theta2_max: float = 8.0
    theta2_step: float = 0.25
    out: str | None = None
    formats: list[str] = field(default_factory=lambda: ["json", "csv"])

    def __post_init__(self) -> None:
        if not self.policies:
            raise ConfigError("at least one policy is required")
        bad = [p for p in self.policies if p not in POLICIES and not (self.env.kind == "goodexpert_lb" and p == "ew")]
        if bad:
            raise ConfigError(f"unknown policy {bad[0]!r}; expected one of {POLICIES}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if self.T < 1 and self.env.kind != "replay":
            raise ConfigError("T must be positive")
        if "sew" in self.policies and 0 < self.T < 4:
            raise ConfigError("policy sew needs T >= 4")
        if self.rate_mode not in RATE_MODES:
            raise ConfigError(f"unknown rate_mode {self.rate_mode!r}")
        if any(o not in ORACLE_CLASSES for o in self.oracles):
            raise ConfigError(f"oracles must be drawn from {ORACLE_CLASSES}")
        if self.grid is not None and self.grid < 2:
            raise ConfigError("grid must be >= 2")
        if self.window is not None and self.window < 1:
            raise ConfigError("window must be >= 1")
        if any(f not in ("json", "csv") for f in self.formats):
            raise ConfigError("formats must be json and/or csv")

    @property
    def theta2_grid(self) -> tuple[float, ...]:
        n = int(round(self.theta2_max / self.theta2_step))
        return tuple(k * self.theta2_step for k in range(n + 1))

    @classmethod
    def from_mapping(cls, raw: dict) -> "ExperimentConfig":
        unknown = set(raw) - set(CONFIG_KEYS)
        if unknown:
            raise ConfigError(f"unknown config key {sorted(unknown)[0]!r}")
        try:
            kind = raw.get("env", "iid")
            params: dict = {}
            if kind == "iid":
                params["preset"] = raw.get("preset", "continuous")
            elif kind == "replay":
                if "path" not in raw:
                    raise ConfigError("env=replay needs path=<csv>")
                params["path"] = raw["path"]
                params["prune"] = str(raw.get("prune", "false")).lower() in ("1", "true", "yes")
            elif kind == "goodexpert_lb":
                params["gap"] = float(raw.get("gap", 0.1))
                params["K"] = int(raw.get("K", 8))
                if raw.get("scenario") not in (None, ""):
                    params["scenario"] = int(raw["scenario"])
            env = EnvSpec(kind, params, int(raw.get("env_seed", 0)))
            policies = _split(raw.get("policy", "ew" if kind == "goodexpert_lb" else "sew"))
            return cls(
                policies=policies,
                env=env,
                T=int(raw.get("T", 0)),
                seeds=[int(s) for s in _split(raw.get("seeds", "0"))],
                grid=int(raw["grid"]) if raw.get("grid") not in (None, "") else None,
                window=int(raw["window"]) if raw.get("window") not in (None, "") else None,
                rate_mode=raw.get("rate_mode", THEORETICAL),
                oracles=_split(raw.get("oracles", ",".join(ORACLE_CLASSES))),
                theta_step=float(raw.get("theta_step", DEFAULT_STEP)),
                theta2_max=float(raw.get("theta2_max", 8.0)),
                theta2_step=float(raw.get("theta2_step", 0.25)),
                out=raw.get("out") or None,
                formats=_split(raw.get("formats", "json,csv")),
            )
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def echo(self) -> dict:
        d = asdict(self)
        d["env"] = {"kind": self.env.kind, "params": dict(self.env.params), "seed": self.env.seed}
        d["theta2_grid"] = list(self.theta2_grid)
        return d


def read_config_file(path: str | Path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    path = Path(path)
    out = {}
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}: line {lineno}: expected key=value")
        out[key.strip()] = val.strip()
    return out


# ---------------------------------------------------------------- running


@dataclass
class CellResult:
    policy: str
    seed: int
    cum_reward: np.ndarray
    bids: np.ndarray
    won: np.ndarray
    total_reward: float
    expected_reward: float | None
    wins: int
    regret: dict
    histogram: np.ndarray
    wall_time_per_round: float
    ew_evaluations: int | None = None

    def body(self) -> dict:
        return {
            "policy": self.policy,
            "seed": self.seed,
            "total_reward": self.total_reward,
            "expected_reward": self.expected_reward,
            "wins": self.wins,
            "regret": self.regret,
            "ew_evaluations": self.ew_evaluations,
            "histogram": self.histogram.tolist(),
            "cum_reward": self.cum_reward.tolist(),
            "bid": self.bids.tolist(),
            "won": self.won.astype(int).tolist(),
        }


@dataclass
class RunReport:
    config: dict
    cells: dict
    oracles: dict
    timing: dict
    created: str
    version: str = __version__
    schema_version: int = SCHEMA_VERSION

    def cell(self, policy: str, seed: int) -> dict:
        return self.cells[cell_key(policy, seed)]

    def body(self) -> dict:
        """Deterministic content: everything except timestamps and wall-clock timings."""
        return {
            "schema_version": self.schema_version,
            "version": self.version,
            "config": self.config,
            "oracles": self.oracles,
            "cells": self.cells,
        }

    def to_json(self) -> str:
        doc = self.body()
        doc["meta"] = {"created": self.created, "timing": self.timing}
        return json.dumps(doc, sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "RunReport":
        d = json.loads(text)
        return cls(d["config"], d["cells"], d["oracles"], d["meta"]["timing"], d["meta"]["created"],
                   d["version"], d["schema_version"])


def cell_key(policy: str, seed: int) -> str:
    return f"{policy}/{seed}"


def threads_from_env(default: int | None = None) -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw == "":
        return default or os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


def trace_seed(env: EnvSpec, seed: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([env.seed, seed, 0])


def policy_rng(env: EnvSpec, seed: int, policy: str) -> np.random.Generator:
    return np.random.default_rng([env.seed, seed, 1, zlib.crc32(policy.encode())])


def make_policy(name: str, cfg: ExperimentConfig, T: int, rng: np.random.Generator) -> Policy:
    window = cfg.window or default_window(T)
    if name == "chew":
        return ChewPolicy(T, rng, rate_mode=cfg.rate_mode)
    if name == "product":
        return ProductPolicy(T, rng)
    if name == "linear_shading":
        return LinearShading(window, cfg.theta_step)
    if name == "nonlinear_shading":
        return NonlinearShading(window, cfg.theta_step, cfg.theta2_grid)
    if name == "dist_learning":
        return DistLearning(window)
    raise ConfigError(f"policy {name!r} has no round-loop implementation")


def run_round_loop(policy: Policy, trace: AuctionTrace):
    """Full-information loop: b_t is fixed before m_t is handed to the policy."""
    T = trace.T
    bids, pay = np.empty(T), np.empty(T)
    expected = np.empty(T)
    have_expected = True
    for t, (v, m) in enumerate(trace):
        bids[t] = policy.next_bid(v)
        out = policy.observe(v, m)
        pay[t] = out.payoff
        if out.expected_payoff is None:
            have_expected = False
        else:
            expected[t] = out.expected_payoff
    return bids, pay, (expected if have_expected else None)


def run_policy(name: str, cfg: ExperimentConfig, trace: AuctionTrace, seed: int):
    rng = policy_rng(cfg.env, seed, name)
    T = trace.T
    evals = None
    t0 = time.perf_counter()
    if name == "sew":
        state = SewState.new(SewConfig(T, cfg.rate_mode))
        run = sew_run(state, trace, rng)
        bids, pay, expected, evals = run.bids, run.payoffs, run.expected, run.ew_evaluations
    else:
        bids, pay, expected = run_round_loop(make_policy(name, cfg, T, rng), trace)
    wall = (time.perf_counter() - t0) / max(T, 1)
    return bids, pay, expected, evals, wall


def _auction_seed_task(args) -> tuple[int, dict, dict, dict]:
    cfg, seed = args
    trace = make_trace(cfg.env, cfg.T, trace_seed(cfg.env, seed))
    G = cfg.grid or default_grid(trace.T)
    oracles = {}
    timing = {}
    for cls in cfg.oracles:
        t0 = time.perf_counter()
        res = run_oracle(trace, cls, G)
        timing[f"oracle:{cls}"] = time.perf_counter() - t0
        oracles[cls] = res
    cells = {}
    for name in cfg.policies:
        bids, pay, expected, evals, wall = run_policy(name, cfg, trace, seed)
        won = bids >= trace.m
        cum = np.cumsum(pay)
        total = math.fsum(pay.tolist())
        hist, _ = np.histogram(np.clip(bids, 0.0, 1.0), bins=HIST_BINS, range=(0.0, 1.0))
        reg = {cls: regret(trace, pay, res) for cls, res in oracles.items()}
        if expected is not None:
            reg.update({f"{cls}_expected": regret(trace, expected, res) for cls, res in oracles.items()})
        cell = CellResult(name, seed, cum, bids, won, total,
                          None if expected is None else math.fsum(expected.tolist()),
                          int(won.sum()), reg, hist, wall, evals)
        cells[cell_key(name, seed)] = cell.body()
        timing[cell_key(name, seed)] = {"wall_time_per_round": wall}
    orc = {
        cls: {"best_reward": r.best_reward, "G": r.G, "error_bound": r.error_bound}
        for cls, r in oracles.items()
    }
    orc["T"] = trace.T
    orc["dropped"] = trace.dropped
    return seed, cells, orc, timing


def _expert_seed_task(args) -> tuple[int, dict, dict, dict]:
    cfg, seed = args
    p = cfg.env.params
    K, gap = int(p.get("K", 8)), float(p.get("gap", 0.1))
    mat = gen_goodexpert_lb(cfg.T, K, gap, p.get("scenario"), trace_seed(cfg.env, seed))
    t0 = time.perf_counter()
    run = ew_run(mat.rewards, gap, policy_rng(cfg.env, seed, "ew"), cfg.rate_mode)
    wall = (time.perf_counter() - t0) / cfg.T
    cells = {cell_key("ew", seed): {
        "policy": "ew",
        "seed": seed,
        "total_reward": run.realized_reward,
        "expected_reward": run.expected_reward,
        "regret": {"best_expert_expected": run.regret, "best_expert": run.realized_regret},
        "scenario": mat.scenario,
        "best_expert": run.best_expert + 1,
        "choices": (run.choices + 1).tolist(),
    }}
    orc = {"best_expert": {"best_reward": run.best_reward, "bound": good_expert_bound(cfg.T, gap, K),
                           "delta": mat.delta}, "T": cfg.T}
    return seed, cells, orc, {cell_key("ew", seed): {"wall_time_per_round": wall}}


def run_experiment(cfg: ExperimentConfig, workers: int | None = None) -> RunReport:
    """Run every (policy, seed) cell; seeds are independent tasks on a process pool.

    Results are keyed by cell, so the report does not depend on scheduling.
    """
    task = _expert_seed_task if cfg.env.kind == "goodexpert_lb" else _auction_seed_task
    if cfg.env.kind == "goodexpert_lb" and cfg.policies != ["ew"]:
        raise ConfigError("env goodexpert_lb is an expert-advice problem; use policy=ew")
    workers = min(workers or threads_from_env(), len(cfg.seeds))
    jobs = [(cfg, s) for s in cfg.seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(task, jobs))
    else:
        results = [task(j) for j in jobs]
    cells, oracles, timing = {}, {}, {}
    for seed, c, o, tm in sorted(results, key=lambda r: r[0]):
        cells.update(c)
        oracles[str(seed)] = o
        timing.update(tm)
    cells = dict(sorted(cells.items()))
    created = datetime.now(timezone.utc).isoformat(timespec="seconds")
    return RunReport(cfg.echo(), cells, oracles, timing, created)


# ---------------------------------------------------------------- emission

CURVE_HEADER = ["policy", "seed", "t", "cum_reward", "bid", "won"]
HIST_HEADER = ["policy", "bin_lo", "bin_hi", "count"]


def _curve_scale(report: RunReport) -> float:
    """Largest final cumulative reward; curves are divided by it for plot data."""
    finals = [c["cum_reward"][-1] for c in report.cells.values() if c.get("cum_reward")]
    top = max(finals, default=0.0)
    return top if top > 0 else 1.0


def emit_report(report: RunReport, out_dir: str | Path, formats=("json", "csv")) -> list[Path]:
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"{out_dir}: cannot create output directory: {exc.strerror}") from None
    written = []
    try:
        if "json" in formats:
            p = out_dir / "report.json"
            p.write_text(report.to_json())
            written.append(p)
        if "csv" in formats:
            scale = _curve_scale(report)
            p = out_dir / "curves.csv"
            with p.open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(CURVE_HEADER)
                for c in report.cells.values():
                    if "cum_reward" not in c:
                        continue
                    for t, (cr, b, won) in enumerate(zip(c["cum_reward"], c["bid"], c["won"]), start=1):
                        w.writerow([c["policy"], c["seed"], t, repr(cr / scale), repr(b), won])
            written.append(p)
            p = out_dir / "histograms.csv"
            agg: dict[str, np.ndarray] = {}
            for c in report.cells.values():
                if "histogram" in c:
                    agg[c["policy"]] = agg.get(c["policy"], 0) + np.asarray(c["histogram"])
            edges = np.linspace(0, 1, HIST_BINS + 1)
            with p.open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(HIST_HEADER)
                for pol in sorted(agg):
                    for k in range(HIST_BINS):
                        w.writerow([pol, repr(float(edges[k])), repr(float(edges[k + 1])), int(agg[pol][k])])
            written.append(p)
    except OSError as exc:
        raise OSError(f"{out_dir}: cannot write report: {exc.strerror}") from None
    return written
