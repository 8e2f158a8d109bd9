"""Command-line entry point: ``auctionbid run | oracle | gen``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .core import TraceError, read_trace_csv, write_trace_csv
from .environments import ENV_KINDS, EnvSpec, gen_goodexpert_lb, make_trace
from .harness import CONFIG_KEYS, ConfigError, ExperimentConfig, emit_report, read_config_file, run_experiment
from .oracle import ORACLE_CLASSES, run_oracle

DEFAULT_OUT = "results"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="auctionbid", description="Online bidding for repeated first-price auctions.")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment from a key=value config")
    run.add_argument("--config", help="config file; flags override its keys")
    for key in CONFIG_KEYS:
        run.add_argument(f"--{key}", dest=key, default=None)

    orc = sub.add_parser("oracle", help="hindsight benchmark of a trace CSV")
    orc.add_argument("--trace", required=True)
    orc.add_argument("--class", dest="oracle_class", choices=ORACLE_CLASSES, default="lipschitz")
    orc.add_argument("--grid", type=int, default=None)

    gen = sub.add_parser("gen", help="generate a trace (or reward matrix) as CSV")
    gen.add_argument("--env", required=True, choices=[k for k in ENV_KINDS if k != "replay"])
    gen.add_argument("--T", type=int, required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    gen.add_argument("--preset", default="continuous")
    gen.add_argument("--K", type=int, default=8)
    gen.add_argument("--gap", type=float, default=0.1)
    gen.add_argument("--scenario", type=int, default=None)
    return p


def cmd_run(args) -> int:
    raw = read_config_file(args.config) if args.config else {}
    raw.update({k: getattr(args, k) for k in CONFIG_KEYS if getattr(args, k) is not None})
    cfg = ExperimentConfig.from_mapping(raw)
    report = run_experiment(cfg)
    paths = emit_report(report, cfg.out or DEFAULT_OUT, cfg.formats)
    for key, cell in report.cells.items():
        reg = cell["regret"]
        regs = " ".join(f"{k}={v:.3f}" for k, v in sorted(reg.items()) if not k.endswith("_expected"))
        print(f"{key} total_reward={cell['total_reward']:.3f} {regs}")
    for p in paths:
        print(f"wrote {p}")
    return 0


def cmd_oracle(args) -> int:
    trace = read_trace_csv(args.trace)
    res = run_oracle(trace, args.oracle_class, args.grid)
    sys.stdout.write(res.to_text())
    return 0


def cmd_gen(args) -> int:
    out = Path(args.out)
    if args.env == "goodexpert_lb":
        gen_goodexpert_lb(args.T, args.K, args.gap, args.scenario, args.seed).write_csv(out)
    else:
        params = {"preset": args.preset} if args.env == "iid" else {}
        write_trace_csv(make_trace(EnvSpec(args.env, params, args.seed), args.T, args.seed), out)
    print(f"wrote {out}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {"run": cmd_run, "oracle": cmd_oracle, "gen": cmd_gen}
    try:
        return handlers[args.command](args)
    except (ConfigError, TraceError, ValueError, OSError, RuntimeError) as exc:
        print(f"auctionbid: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
