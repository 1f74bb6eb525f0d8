"""Command line front door: ``ocfl {partition,run,sweep,plotdata}``.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, ExperimentConfig, load_config
from .datagen import write_partition
from .experiment import plot_data, prepare_data, run_and_write, write_comparison
from .federation import METHODS
from .idx import IdxError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

log = logging.getLogger("ocfl")


def _load(args, check_methods: bool = True) -> tuple[ExperimentConfig, Path]:
    if args.config is None:
        raise ConfigError("--config: required")
    cfg = load_config(args.config, check_methods=check_methods)
    if args.seed is not None:
        if args.seed < 0 or args.seed >= 2**64:
            raise ConfigError("--seed: must be an unsigned 64-bit integer")
        cfg = cfg.with_seed(args.seed)
    out = args.out or cfg.output_dir
    if out is None:
        raise ConfigError("--out: required (or set output_dir in the config)")
    return cfg, Path(out)


def _checked_dir(out: Path) -> None:
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise RuntimeError(f"cannot create output directory {out}: {exc.strerror}") from None


def cmd_partition(args) -> int:
    cfg, out = _load(args)
    _checked_dir(out)
    data = prepare_data(cfg)
    files = write_partition(out, data.plan, data.datasets, data.orch)
    print(f"wrote {len(files)} files to {out}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg, out = _load(args)
    _checked_dir(out)
    results = run_and_write(cfg, out)
    failed = [m for m, s in results.items() if s.get("failed")]
    for method, s in results.items():
        if s.get("failed"):
            print(f"{method}: FAILED at round {s['round']}: {s['error']}", file=sys.stderr)
        else:
            print(f"{method}: trigger_round={s['trigger_round']} n_clusters={s['n_clusters']}")
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_sweep(args) -> int:
    cfg, out = _load(args, check_methods=False)
    methods = tuple(args.methods) if args.methods else cfg.methods
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ConfigError(f"--methods: unknown method {unknown[0]!r}; "
                          f"choose from {', '.join(METHODS)}")
    cfg = replace(cfg, methods=methods)
    _checked_dir(out)
    results = run_and_write(cfg, out, methods)
    write_comparison(out / "comparison.csv", results)
    failed = [m for m, s in results.items() if s.get("failed")]
    for m in failed:
        print(f"{m}: FAILED: {results[m]['error']}", file=sys.stderr)
    print(f"wrote {out / 'comparison.csv'} ({len(methods) - len(failed)}/{len(methods)} ok)")
    return EXIT_RUNTIME if len(failed) == len(methods) else EXIT_OK


def cmd_plotdata(args) -> int:
    run_dir = Path(args.run_dir if args.run_dir is not None else args.out or ".")
    try:
        files = plot_data(run_dir)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for f in files:
        print(f)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (JSON)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="root seed, overrides the config")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ocfl",
                                     description="One-shot clustered federated learning")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("partition", parents=[common], help="generate and store a partition")
    p.set_defaults(func=cmd_partition)
    p = sub.add_parser("run", parents=[common], help="run the configured methods")
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("sweep", parents=[common], help="compare methods on one partition")
    p.add_argument("--methods", nargs="+", metavar="METHOD", help=", ".join(METHODS))
    p.set_defaults(func=cmd_sweep)
    p = sub.add_parser("plotdata", parents=[common], help="emit plot-ready CSVs for a run")
    p.add_argument("run_dir", nargs="?", help="a per-method telemetry directory")
    p.set_defaults(func=cmd_plotdata)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IdxError, OSError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
