"""Command-line entry point.

    lab <experiment> --config <path> [--out DIR] [--seed N]
                     [--override key=value ...]

The positional experiment name is authoritative (it overrides any
`experiment` line in the config file). Overrides apply in order after the
file is parsed, then --out rewrites output_dir and --seed rewrites
model.seed.

Exit statuses:

    0  run completed, every artifact written
    1  unexpected internal error
    2  config failure (bad file, bad key, bad value, missing input path)
    3  unknown experiment name
    4  output directory not writable (or other filesystem failure mid-run)
    5  numerics failure (non-finite values where the run cannot continue)
"""

from __future__ import annotations

import argparse
import sys

from ..errors import ConfigError, NumericsError, UnknownExperimentError
from .config import EXPERIMENTS, load_config
from .runners import run_experiment

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CONFIG = 2
EXIT_UNKNOWN_EXPERIMENT = 3
EXIT_IO = 4
EXIT_NUMERICS = 5


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lab",
        description="Run one experiment from a flat key = value config file.")
    parser.add_argument("experiment",
                        help=f"one of: {', '.join(EXPERIMENTS)}")
    parser.add_argument("--config", required=True,
                        help="path to the config file")
    parser.add_argument("--out", default=None,
                        help="output directory (overrides output_dir)")
    parser.add_argument("--seed", type=int, default=None,
                        help="model seed (overrides model.seed)")
    parser.add_argument("--override", action="append", default=[],
                        metavar="KEY=VALUE",
                        help="set one config key (repeatable; JSON values)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)

    if args.experiment not in EXPERIMENTS:
        print(f"lab: unknown experiment {args.experiment!r}; "
              f"known: {', '.join(EXPERIMENTS)}", file=sys.stderr)
        return EXIT_UNKNOWN_EXPERIMENT

    overrides = list(args.override)
    if args.out is not None:
        overrides.append(f"output_dir={args.out}")
    if args.seed is not None:
        overrides.append(f"model.seed={args.seed}")
    overrides.append(f"experiment={args.experiment}")

    try:
        try:
            cfg = load_config(args.config, overrides)
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        manifest = run_experiment(cfg)
    except UnknownExperimentError as exc:
        print(f"lab: {exc}", file=sys.stderr)
        return EXIT_UNKNOWN_EXPERIMENT
    except ConfigError as exc:
        print(f"lab: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"lab: filesystem error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericsError, RuntimeError) as exc:
        print(f"lab: numerics/invariant failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICS
    except Exception as exc:  # pragma: no cover - defensive catch-all
        print(f"lab: internal error: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return EXIT_INTERNAL

    print(f"lab: {cfg.experiment} finished; "
          f"{len(manifest['artifacts'])} artifacts in {cfg.output_dir} "
          f"({manifest['wall_time_s']:.1f}s)")
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
