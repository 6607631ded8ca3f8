"""Command line entry point: ``hierec <command> --config FILE [--seed N] [--out DIR]``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import torch

from . import pipeline
from .config import ConfigError, load_config
from .training import gradient_check, tiny_setup

COMMANDS = {
    "prepare": pipeline.run_prepare,
    "train": pipeline.run_train,
    "evaluate": pipeline.run_evaluate,
    "recall": pipeline.run_recall,
    "ablate": pipeline.run_ablate,
    "sweep": pipeline.run_sweep,
}
GRADCHECK_TOL = 1e-3


def run_gradcheck(cfg, out: Path) -> dict:
    seed = cfg.seeds[0]
    model, catalog, sample, _ = tiny_setup(seed)
    result = gradient_check(model, sample, catalog, cfg.match)
    report = {
        "seed": seed,
        "max_relative_error": result.max_relative_error,
        "per_tensor": result.per_tensor,
        "n_entries": result.n_entries,
        "epsilon": result.epsilon,
        "tolerance": GRADCHECK_TOL,
        "passed": result.passed(GRADCHECK_TOL),
    }
    pipeline.write_json(out / "gradcheck.json", report)
    print(f"max relative error {result.max_relative_error:.3e} "
          f"({'PASS' if report['passed'] else 'FAIL'} vs {GRADCHECK_TOL:g})")
    return report


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hierec", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in [*COMMANDS, "gradcheck"]:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path, help="YAML experiment config")
        p.add_argument("--seed", type=int, help="run a single seed instead of the config's list")
        p.add_argument("--out", type=Path, help="output directory (default: config output_dir)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        if not args.config.exists():
            raise FileNotFoundError(f"config not found: {args.config}")
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = dataclasses.replace(cfg, seeds=[args.seed])
        out = args.out or Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        torch.use_deterministic_algorithms(True, warn_only=True)
        if args.command == "gradcheck":
            report = run_gradcheck(cfg, out)
            return 0 if report["passed"] else 1
        report = COMMANDS[args.command](cfg, out)
    except (FileNotFoundError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.command in ("prepare", "evaluate", "ablate"):
        print(json.dumps(report, indent=2, sort_keys=True))
    else:
        print(f"{args.command}: reports written to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
