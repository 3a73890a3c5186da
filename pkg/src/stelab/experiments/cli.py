"""Command-line entry point.

Exit codes: 0 success, 2 tolerance failure (compare), 3 divergence, 4 config error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from ..errors import ConfigError, SchemaError
from .config import FIGURES, KINDS, ExperimentConfig, read_config_file, resolve
from .io import compare
from .presets import get_preset

EXIT_OK, EXIT_TOLERANCE, EXIT_DIVERGENCE, EXIT_CONFIG = 0, 2, 3, 4


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--threads", type=int, help="worker threads for independent runs")
    p.add_argument("--plot", action="store_true", default=None, help="render SVG figures next to the CSVs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stelab", description="Quantized STE learning dynamics toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in KINDS:
        if kind == "reproduce":
            p = sub.add_parser(kind, help="regenerate a figure preset")
            p.add_argument("figure", choices=FIGURES)
        else:
            p = sub.add_parser(kind, help=f"run the {kind} engine")
        _common(p)
    p = sub.add_parser("compare", help="compare eps_g columns of two trajectory CSVs")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--tolerance", type=float, default=0.05)
    p.add_argument("--stderr-factor", type=float, default=0.0,
                   help="also accept |diff| up to this multiple of the combined stderr")
    p.add_argument("--interpolate", action="store_true", help="resample b onto the tau grid of a")
    return parser


def config_from_args(args: argparse.Namespace, environ=None) -> ExperimentConfig:
    cli = {"kind": args.command}
    preset = None
    if args.command == "reproduce":
        cli["figure"] = args.figure
        preset = get_preset(args.figure)
    for key in ("out", "seed", "threads", "plot"):
        value = getattr(args, key, None)
        if value is not None:
            cli[key] = value
    file_cfg = read_config_file(args.config) if args.config else None
    return ExperimentConfig.from_dict(resolve(file_cfg, cli, preset, environ))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "compare":
        try:
            report = compare(args.a, args.b, args.tolerance, args.interpolate, args.stderr_factor)
        except (SchemaError, OSError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        print(report.summary())
        return EXIT_OK if report.passed else EXIT_TOLERANCE

    from .runner import RunFailed, run

    try:
        ec = config_from_args(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        manifest, _ = run(ec)
    except RunFailed as exc:
        print(f"diverged: {exc}; partial artifacts in {ec.out}", file=sys.stderr)
        return exc.exit_code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"wrote {len(manifest.outputs)} artifacts to {ec.out} in {manifest.wall_clock_s:.1f} s")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
