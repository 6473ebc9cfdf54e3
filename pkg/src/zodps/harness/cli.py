"""Command-line entry point.

    zodps run --preset lasso-zodps --out out/
    zodps sweep-h --preset sweep-h --h 0.05 0.1 0.2
    zodps sweep-mn --preset sweep-mn --pair 100 1000 --pair 200 500
    zodps make-reference --preset lasso-rgo --size 1000 ref.csv
    zodps estimate-kl samples.csv ref.csv
    zodps print-presets

Exit codes: 0 success, 1 invalid configuration, 2 sampler failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..core import Ensemble
from ..diagnostics import knn_kl
from . import config as hconfig
from . import io as hio
from .config import ConfigError
from .experiments import (
    EXIT_INVALID,
    EXIT_OK,
    EXIT_RUNTIME,
    generate_reference,
    run_experiment,
    sweep_mn,
    sweep_step_size,
)


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="TOML experiment file")
    p.add_argument("--preset", help="built-in preset name (see print-presets)")
    p.add_argument("--seed", type=int, action="append", help="master seed; repeat for several")
    p.add_argument("--out", help="output directory")
    p.add_argument("--paper-scale", action="store_true", help="use the full interim sample counts")
    p.add_argument("--threads", type=int, default=None, help="parallel seeds (ZODPS_THREADS overrides)")
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--no-plots", action="store_true")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="zodps", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="run one experiment over its seeds")
    sh = sub.add_parser("sweep-h", parents=[common], help="KL curves for several step sizes")
    sh.add_argument("--h", type=float, nargs="+", dest="h_values")
    sm = sub.add_parser("sweep-mn", parents=[common], help="KL curves for (N, M) pairs with fixed N*M")
    sm.add_argument("--pair", type=int, nargs=2, action="append", metavar=("N", "M"))
    mr = sub.add_parser("make-reference", parents=[common], help="write a reference ensemble CSV")
    mr.add_argument("path", type=Path)
    mr.add_argument("--size", type=int, default=1000)
    mr.add_argument("--burn-in", type=int, default=200, help="updates per chain before collection")
    mr.add_argument("--collect", type=int, default=800, help="collected updates per chain")
    mr.add_argument("--method", choices=("rgo", "exact"), default="rgo")
    ek = sub.add_parser("estimate-kl", help="k-NN KL(p || q) between two ensemble CSVs")
    ek.add_argument("p", type=Path)
    ek.add_argument("q", type=Path)
    ek.add_argument("--k", type=int, default=4)
    pp = sub.add_parser("print-presets", parents=[common], help="print preset configurations as TOML")
    pp.add_argument("--schema", action="store_true", help="print the configuration schema instead")
    return parser


def _resolve_config(args, default_preset: str) -> hconfig.ExperimentConfig:
    if args.config is not None:
        cfg = hconfig.load(args.config)
    else:
        name = args.preset or default_preset
        table = hconfig.presets(args.paper_scale)
        if name not in table:
            raise ConfigError([f"unknown preset {name!r}; choose from {sorted(table)}"])
        cfg = table[name]
    if args.seed:
        cfg.seeds = list(args.seed)
    if args.out:
        cfg.output = args.out
    if args.iterations is not None:
        cfg.iterations = args.iterations
    return hconfig.validate(cfg)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except RuntimeError as exc:
        print(f"sampler error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def _report(result) -> int:
    for path in result.files:
        print(path)
    if result.status != EXIT_OK:
        print("one or more seeds failed; partial results were written", file=sys.stderr)
    return result.status


def _dispatch(args) -> int:
    plot = not getattr(args, "no_plots", False)
    if args.command == "estimate-kl":
        p, _ = hio.read_ensemble(args.p)
        q, _ = hio.read_ensemble(args.q)
        est = knn_kl(p, q, args.k)
        print(f"kl={est.value!r} n={est.n} m={est.m} k={est.k} floored={est.floored}")
        return EXIT_OK
    if args.command == "print-presets":
        if args.schema:
            print(hconfig.SCHEMA, end="")
            return EXIT_OK
        for name, cfg in hconfig.presets(args.paper_scale).items():
            if args.preset and name != args.preset:
                continue
            print(f"# ---- preset: {name}")
            print(hconfig.to_toml(cfg))
        return EXIT_OK
    if args.command == "run":
        return _report(run_experiment(_resolve_config(args, "lasso-zodps"), args.threads, plot))
    if args.command == "sweep-h":
        cfg = _resolve_config(args, "sweep-h")
        h_values = args.h_values if args.h_values is not None else cfg.sweep.h_values
        if not h_values:
            raise ConfigError(["sweep-h needs at least one step size"])
        return _report(sweep_step_size(cfg, h_values, args.threads, plot))
    if args.command == "sweep-mn":
        cfg = _resolve_config(args, "sweep-mn")
        pairs = args.pair if args.pair is not None else cfg.sweep.pairs
        return _report(sweep_mn(cfg, pairs, args.threads, plot))
    if args.command == "make-reference":
        cfg = _resolve_config(args, "lasso-rgo")
        seed = cfg.seeds[0]
        generate_reference(cfg, args.path, seed, args.size, args.burn_in, args.collect, args.method)
        print(args.path)
        return EXIT_OK
    raise AssertionError(args.command)


if __name__ == "__main__":
    sys.exit(main())
