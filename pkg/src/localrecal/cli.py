"""Command-line pipeline driver.

Verbs: simulate, train, recalibrate, evaluate, sweep. Every command is
deterministic given its config; reruns are byte-identical except for timing
fields. Exit codes: 0 success, 2 config/usage error, 3 I/O error, 4 numeric
failure, 5 partial sweep failure.
"""

from __future__ import annotations

import argparse
import sys

from . import pipeline
from .config import config_from_dict, load_config
from .errors import ConfigError, DomainError, LoadError, NumericalError, TrainingError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4
EXIT_SWEEP = 5


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="localrecal",
        description="Train, recalibrate, and evaluate probabilistic regression models.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--verbose", action="store_true")

    p = sub.add_parser("simulate", help="generate dataset splits")
    add_common(p)

    p = sub.add_parser("train", help="train the configured model")
    add_common(p)
    p.add_argument("--data", required=True, help="directory with split files")

    p = sub.add_parser("recalibrate", help="produce recalibrated outputs for the test split")
    add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mode", default=None,
                   choices=["none", "local", "global", "isotonic"],
                   help="override the configured recalibration mode")
    p.add_argument("--include-samples", action="store_true",
                   help="also write the full weighted samples (long format)")

    p = sub.add_parser("evaluate", help="metric reports for recalibrated-output files")
    p.add_argument("outputs", nargs="+", help="outputs_<mode>.csv files")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--verbose", action="store_true")

    p = sub.add_parser("sweep", help="run a Cartesian config sweep")
    add_common(p)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--modes", default="none,local",
                   help="comma-separated recalibration modes per cell")
    return parser


def _load_run_config(args):
    raw = load_config(args.config)
    cfg = config_from_dict(raw)
    if args.seed is not None:
        raw = cfg.to_dict()
        raw["seed"] = args.seed
        raw["model"]["train"]["seed"] = args.seed
        cfg = config_from_dict(raw)
    return cfg


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "simulate":
            cfg = _load_run_config(args)
            paths = pipeline.simulate(cfg, args.out)
            if args.verbose:
                for name, path in paths.items():
                    print(f"wrote {name}: {path}")
        elif args.command == "train":
            cfg = _load_run_config(args)
            ckpt, history = pipeline.train_model(cfg, args.data, args.out)
            if args.verbose:
                print(f"wrote {ckpt} (best epoch {history['best_epoch']}, "
                      f"val loss {history['best_val']:.6f})")
        elif args.command == "recalibrate":
            cfg = _load_run_config(args)
            out = pipeline.recalibrate(cfg, args.data, args.checkpoint, args.out,
                                       mode=args.mode, include_samples=args.include_samples)
            if args.verbose:
                print(f"wrote {out}")
        elif args.command == "evaluate":
            if not args.outputs:
                raise ConfigError("evaluate needs at least one outputs file")
            reports = pipeline.evaluate(args.outputs, args.data, out_dir=args.out)
            for rep in reports:
                print(rep.to_kv_text())
        elif args.command == "sweep":
            raw = load_config(args.config)
            if args.seed is not None:
                if "base" not in raw:
                    raise ConfigError("sweep config needs a 'base' section")
                raw["base"]["seed"] = args.seed
            modes = tuple(m.strip() for m in args.modes.split(",") if m.strip())
            rows, any_failed = pipeline.run_sweep(raw, args.out, workers=args.workers, modes=modes)
            if args.verbose:
                for row in rows:
                    print(row["cell"], row["status"])
            if any_failed:
                print("sweep finished with failed cells", file=sys.stderr)
                return EXIT_SWEEP
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (LoadError, OSError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericalError, TrainingError, DomainError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
