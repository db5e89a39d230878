"""Command-line entry point: run, sweep, gradcheck, pack, staleness."""
from __future__ import annotations

import argparse
import logging
import sys

from . import datagen
from .checks import TOLERANCE, gradcheck_suite
from .config import ConfigError, ExperimentConfig, load_config, parse_value
from .harness import build_data, run_experiment, summary_csv, sweep, sweep_csv
from .numerics import NumericalFault
from .sim import staleness_stats

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECK = 0, 1, 2, 3


def _cmd_run(args) -> int:
    res = run_experiment(load_config(args.config), args.out)
    sys.stdout.write(summary_csv(res.summary))
    return EXIT_OK


def _cmd_sweep(args) -> int:
    values = [parse_value(v) for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError(["--values: no values given"])
    sys.stdout.write(sweep_csv(sweep(load_config(args.config), args.key, values)))
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    kinds = list(TOLERANCE) if args.model == "all" else [args.model]
    seeds = [args.seed] if args.seed is not None else range(args.instances)
    failed = False
    for kind in kinds:
        errs = gradcheck_suite(kind, seeds, args.h)
        ok = max(errs) <= TOLERANCE[kind]
        failed |= not ok
        print(f"{kind}: instances={len(errs)} max_rel_err={max(errs):.3e} tol={TOLERANCE[kind]:.0e} "
              f"{'PASS' if ok else 'FAIL'}")
    return EXIT_CHECK if failed else EXIT_OK


def _cmd_pack(args) -> int:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    train, _, _ = build_data(cfg)
    packed = datagen.pack_batches(train, args.budget, args.seed, cfg.batch.sort_window, cfg.batch.drop_oversized)
    if args.report:
        sys.stdout.write(datagen.packing_report(packed))
    else:
        print("batch,words,flagged,indices")
        flagged = set(packed.flagged)
        for k, (idx, w) in enumerate(zip(packed.batches, packed.words)):
            print(f"{k},{w},{int(k in flagged)},{' '.join(map(str, idx))}")
    return EXIT_OK


def _cmd_staleness(args) -> int:
    res = run_experiment(load_config(args.config))
    mean, mx, hist = staleness_stats(res.log)
    print(f"pushes={len(res.log)} mean={mean:.6g} max={mx}")
    print("staleness,count")
    for k, v in hist.items():
        print(f"{k},{v}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="asgdlab", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="directory for metrics.jsonl, summary.csv, pushes.csv")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("sweep", help="run one experiment per value of a config key")
    p.add_argument("--config", required=True)
    p.add_argument("--key", required=True, help="dotted key path, e.g. train.tau")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference check of analytic gradients")
    p.add_argument("--model", default="all", choices=["all", *TOLERANCE])
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--h", type=float, default=1e-4)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("pack", help="pack the training corpus into token-budget batches")
    p.add_argument("--budget", type=int, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None, help="data section source (defaults otherwise)")
    p.add_argument("--report", action="store_true", help="emit a one-row CSV summary")
    p.set_defaults(func=_cmd_pack)

    p = sub.add_parser("staleness", help="print staleness statistics of a run")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_staleness)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFault as exc:
        print(f"numerical fault: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
