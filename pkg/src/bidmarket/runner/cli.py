"""Command-line entry point: ``bidmarket <subcommand> [--config PATH] [overrides]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..lp import InfeasibleError, SolverError
from ..network import CaseError, validate_case
from .config import (
    CollusionConfig, ConfigError, DeviationConfig, DisturbanceConfig, ExperimentConfig, ScheduleConfig,
    StopConfig, StrategyConfig, check_config, load_config,
)
from .experiment import run_experiment

SUBCOMMANDS = {"opf": "opf_only", "baa": "baa", "perturb": "perturbed", "deviate": "deviation",
               "collude": "collusion", "validate": None}

# reference initial bids for the nine-bus case
REF_B1 = [7.6096, 9.9313, 7.6087, 8.4827, 6.6175, 7.5254]


def default_config(mode: str) -> ExperimentConfig:
    """Nine-bus settings for each mode, used when no --config is given."""
    cfg = ExperimentConfig(mode=mode, initial_bids=list(REF_B1), stop=StopConfig(epsilon=1e-12, max_iters=5000))
    if mode == "perturbed":
        cfg.disturbance = DisturbanceConfig(
            kind="stepsize_variation",
            schedule=ScheduleConfig(kind="per_generator_random", beta=0.01, low=0.001, high=0.1))
    elif mode == "deviation":
        cfg.deviation = DeviationConfig(generator=1, strategy=StrategyConfig(kind="constant", value=4.5))
    elif mode == "collusion":
        cfg.collusion = CollusionConfig(colluders=[1, 3, 5], strategy="undercut_next")
    return cfg


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bidmarket", description="Bid adjustment market experiments.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="JSON experiment config")
        p.add_argument("--seed", type=int)
        p.add_argument("--max-iters", type=int)
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--case", help="preset name or case JSON file (overrides the config)")
        p.add_argument("--no-plots", action="store_true", help="skip PNG rendering")
    return ap


def resolve_config(args) -> tuple[ExperimentConfig, Path | None]:
    mode = SUBCOMMANDS[args.command]
    if args.config is not None:
        cfg = load_config(args.config)
        base = args.config.parent
        if mode is not None and cfg.mode != mode:
            raise ConfigError("mode", f"config declares {cfg.mode!r} but subcommand {args.command!r} runs {mode!r}")
    else:
        cfg = default_config(mode or "baa")
        base = None
    if args.seed is not None:
        cfg.seed = args.seed
    if args.max_iters is not None:
        cfg.stop.max_iters = args.max_iters
    if args.out is not None:
        cfg.output.dir = str(args.out.resolve())
    if args.case is not None:
        cfg.case = args.case
    if args.no_plots:
        cfg.output.plots = False
    check_config(cfg)
    return cfg, base


def _validate(cfg: ExperimentConfig, base) -> int:
    case = cfg.network(base)
    rep = validate_case(case)
    print(f"case: {case.name or cfg.case}  buses={case.n_buses} lines={case.n_lines} generators={case.n_gens}")
    print(f"total load: {rep.total_load:g}")
    print(f"existence hypothesis (>= 2 generators at every generating bus): {'holds' if rep.existence_hypothesis else 'violated'}")
    for w in rep.warnings:
        print(f"warning: {w}")
    for e in rep.errors:
        print(f"error: {e}", file=sys.stderr)
    return 0 if rep.ok else 2


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg, base = resolve_config(args)
        if args.command == "validate":
            return _validate(cfg, base)
        res = run_experiment(cfg, base_dir=base)
    except (ConfigError, CaseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (InfeasibleError, SolverError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 3
    s = res.summary
    brief = {k: s[k] for k in ("b_star", "x_star", "entry_iteration", "terminal_distance")}
    print(json.dumps(brief))
    for f in res.files:
        print(f"wrote {f}")
    for note in s["violations"]["notes"]:
        print(f"note: {note}")
    if res.exit_code:
        name, k = s["violations"]["first_offender"]
        print(f"{s['violations']['total']} violations; first: {name} at iteration {k}", file=sys.stderr)
    return res.exit_code


if __name__ == "__main__":
    sys.exit(main())
