"""Command line entry point: ``metapinn {meta-train,compare,reference,export}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .harness import ConfigError, ExperimentConfig, export_figures_data, load_report, run_comparison, run_meta, write_reference
from .meta import TASK_KINDS, MetaConfig
from .optimizers import OptimizerCheckpoint
from .problems import PROBLEM_NAMES
from .refsolve import IntegrationError

EXIT_OK = 0
EXIT_DIVERGED = 2
EXIT_CONFIG = 3
EXIT_INTEGRATION = 4

log = logging.getLogger("metapinn")


def _experiment_args(p: argparse.ArgumentParser):
    p.add_argument("--problem", choices=PROBLEM_NAMES, default=None)
    p.add_argument("--config", help="JSON experiment config; flags override its fields")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--epochs", type=int)
    p.add_argument("--layers", type=int, dest="hidden_layers")
    p.add_argument("--units", type=int)
    p.add_argument("--n-pde", type=int)
    p.add_argument("--n-ic", type=int)
    p.add_argument("--n-bc", type=int)
    p.add_argument("--minibatches", type=int)
    p.add_argument("--eta", type=float)
    p.add_argument("--lambdas", type=float, nargs=4)
    p.add_argument("--gamma-i", type=float)
    p.add_argument("--gamma-b", type=float)
    p.add_argument("--reference-n", type=int)


_FIELDS = ("epochs", "hidden_layers", "units", "n_pde", "n_ic", "n_bc", "minibatches", "eta", "lambdas", "gamma_i", "gamma_b", "reference_n")


def config_from_args(args) -> ExperimentConfig:
    overrides = {k: getattr(args, k) for k in _FIELDS if getattr(args, k, None) is not None}
    overrides["seed"] = args.seed
    overrides["out_dir"] = args.out
    if getattr(args, "checkpoint", None):
        overrides["checkpoint"] = args.checkpoint
        overrides["optimizer"] = "learned"
    if args.config:
        try:
            base = ExperimentConfig.load(args.config).to_dict()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        if args.problem is not None:
            base["problem"] = args.problem
        base.update(overrides)
        return ExperimentConfig.from_dict(base)
    if args.problem is None:
        raise ConfigError("--problem or --config is required")
    return ExperimentConfig.for_problem(args.problem, **overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metapinn", description="PINN training with Adam or a meta-learned optimizer")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("meta-train", help="meta-train the learned optimizer with PES")
    _experiment_args(p)
    p.add_argument("--tasks", type=int, default=20)
    p.add_argument("--meta-epochs", type=int, default=50)
    p.add_argument("--particles", type=int, default=2)
    p.add_argument("--unroll", type=int, default=1)
    p.add_argument("--sigma", type=float, default=0.01)
    p.add_argument("--alpha", type=float, default=1e-4)
    p.add_argument("--meta-optimizer", choices=("sgd", "adam"), default="sgd")
    p.add_argument("--meta-objective", choices=("mean", "log_mean"), default="mean")
    p.add_argument("--epochs-per-visit", type=int)
    p.add_argument("--distribution", choices=TASK_KINDS, default="reinit_only")
    p.add_argument("--k-in-pi-units", action="store_true", help="kdv_ic_family: use cos(k pi x + phi)")

    p = sub.add_parser("compare", help="train one initialization with Adam and the learned optimizer")
    _experiment_args(p)
    p.add_argument("--checkpoint", help="learned optimizer checkpoint; omit for an Adam-only run")

    p = sub.add_parser("reference", help="write the reference solution as t,x,u_ref")
    _experiment_args(p)
    p.add_argument("--times", type=int, default=101, help="number of saved time levels")

    p = sub.add_parser("export", help="export figure data from a compare output directory")
    p.add_argument("--run", required=True, help="directory written by compare")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    return parser


def _meta_train(args) -> int:
    cfg = config_from_args(args)
    meta = MetaConfig(
        n_particles=args.particles,
        unroll_K=args.unroll,
        sigma=args.sigma,
        alpha=args.alpha,
        n_tasks=args.tasks,
        meta_epochs=args.meta_epochs,
        seed=args.seed,
        meta_optimizer=args.meta_optimizer,
        meta_objective=args.meta_objective,
        epochs_per_visit=args.epochs_per_visit,
    )
    dist_options = {"k_in_pi_units": True} if args.k_in_pi_units else None
    path = run_meta(cfg, meta, args.distribution, dist_options)
    cfg.save(os.path.join(cfg.out_dir, "config.json"))
    print(path)
    return EXIT_OK


def _compare(args) -> int:
    cfg = config_from_args(args)
    ckpt = None
    if cfg.checkpoint:
        try:
            ckpt = OptimizerCheckpoint.load(cfg.checkpoint)
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            raise ConfigError(f"cannot load checkpoint {cfg.checkpoint}: {exc}") from exc
    report = run_comparison(cfg, ckpt)
    cfg.save(os.path.join(cfg.out_dir, "config.json"))
    for name, s in report.summary.items():
        print(f"{name}: final loss {s['final_loss']:.4e}, max |e| {s['max_abs_error']:.3e}, status {s['status']}")
    return EXIT_DIVERGED if report.diverged else EXIT_OK


def _reference(args) -> int:
    cfg = config_from_args(args)
    print(write_reference(cfg, args.times))
    return EXIT_OK


def _export(args) -> int:
    try:
        report = load_report(args.run)
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from exc
    for path in export_figures_data(report, args.out):
        print(path)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    handlers = {"meta-train": _meta_train, "compare": _compare, "reference": _reference, "export": _export}
    try:
        return handlers[args.command](args)
    except IntegrationError as exc:
        print(f"integration failure: {exc}", file=sys.stderr)
        return EXIT_INTEGRATION
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
