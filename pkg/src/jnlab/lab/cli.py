"""Command line entry point: ``jnp-lab <pipeline> [options]``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import yaml

from .experiments import PIPELINES, ConfigError, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_FAILED = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    # bad arguments are config errors, not invariant failures
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="jnp-lab", description="Run a John-Nirenberg experiment pipeline.")
    ap.add_argument("pipeline", choices=PIPELINES)
    ap.add_argument("--domain", action="append", help="domain spec, e.g. square, koch:3, cusp:k=3 (repeatable)")
    ap.add_argument("--function", action="append", help="function spec, e.g. quadrant, logDist:cap=4 (repeatable)")
    ap.add_argument("--J", type=int, help="dyadic resolution")
    ap.add_argument("--p", type=float, action="append", help="JN exponent (repeatable)")
    ap.add_argument("--q", type=float, help="Sobolev exponent")
    ap.add_argument("--delta", type=float, help="fractional smoothness")
    ap.add_argument("--lambda", dest="lam", type=float, help="local dilation factor in (1, 10/9)")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out", type=Path, help="report path (JSON); stdout when omitted")
    ap.add_argument("--csv", type=Path, help="also write one CSV row per item")
    ap.add_argument("--config", type=Path, help="YAML or JSON config; command line flags override it")
    ap.add_argument("--timing", action="store_true", help="record wall-clock time in the report")
    return ap


def load_config(path: Path) -> dict:
    text = path.read_text()
    doc = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ConfigError(str(path), "config document must be a mapping")
    return doc


def config_from_args(args: argparse.Namespace) -> dict:
    cfg = load_config(args.config) if args.config else {}
    if cfg.get("pipeline", args.pipeline) != args.pipeline:
        raise ConfigError("pipeline", f"config names {cfg['pipeline']!r} but command is {args.pipeline!r}")
    cfg["pipeline"] = args.pipeline
    overrides = {
        "domains": args.domain, "functions": args.function, "J": args.J, "p": args.p,
        "q": args.q, "delta": args.delta, "lambda": args.lam, "seed": args.seed,
    }
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    if args.timing:
        cfg["record_timing"] = True
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        report = run_experiment(config_from_args(args))
    except (ConfigError, OSError, yaml.YAMLError, json.JSONDecodeError) as e:
        print(f"jnp-lab: invalid config: {e}", file=sys.stderr)
        return EXIT_CONFIG
    text = report.to_json()
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(text)
    else:
        sys.stdout.write(text)
    if args.csv:
        args.csv.parent.mkdir(parents=True, exist_ok=True)
        args.csv.write_text(report.to_csv())
    if not report.ok:
        print(f"jnp-lab: {report.witness.get('reason', 'invariant failure')}", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
