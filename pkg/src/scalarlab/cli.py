"""Command-line entry point: one subcommand per experiment."""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import tomli

from .config import EXPERIMENTS, ConfigError, apply_override, config_from_dict, parse_config, to_dict
from .runner import DEFAULT_OUT_ENV, default_output_dir, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_REFUSED, EXIT_RUNTIME = 0, 2, 3, 4


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scalarlab",
        description="Passive-scalar experiments on the torus: sweeps, diagnostics and critical-set geometry.",
    )
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} pipeline")
        p.add_argument("--config", type=Path, help="TOML experiment file")
        p.add_argument("--out", type=Path, help=f"output directory (default ${DEFAULT_OUT_ENV} or ./scalarlab_out)")
        p.add_argument("--seed", type=_u64, help="master seed (overrides the file)")
        p.add_argument("--workers", type=int, help="process budget for independent cells")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="dotted key assignment, value parsed as TOML; repeatable")
    return parser


def load_config(args):
    text = args.config.read_text() if args.config else ""
    cfg = parse_config(text)
    doc = to_dict(cfg)
    doc["experiment"] = args.experiment
    for item in args.override:
        apply_override(doc, item)
    cfg = config_from_dict(doc, text)
    if args.seed is not None:
        cfg = replace(cfg, master_seed=args.seed)
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigError("workers must be >= 1", "workers")
        cfg = replace(cfg, workers=args.workers)
    out = args.out or cfg.output_dir or default_output_dir()
    return replace(cfg, output_dir=str(out))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
    except (ConfigError, tomli.TOMLDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        manifest = run_experiment(cfg)
    except Exception as exc:  # failure outside any stage, e.g. unwritable output dir
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for err in manifest.errors:
        print(f"[{err['stage']} r{err['realization']}] {err['type']}: {err['message']}", file=sys.stderr)
    for tag, stages in manifest.results.items():
        for stage, res in stages.items():
            summary = ", ".join(f"{k}={v}" for k, v in res.items() if not isinstance(v, list))
            print(f"{tag} {stage}: {summary}")
    print(f"wrote {len(manifest.files)} files and manifest.json to {cfg.output_dir}")
    return manifest.exit_code


if __name__ == "__main__":
    sys.exit(main())
