"""Experiment runner: `train` executes a config end to end (training,
checkpoints, histories, evaluation against a reference grid, figures, results
ledger), `reference` generates or re-emits reference grids, `evaluate` scores
a checkpoint against a grid.

Exit codes: 0 success, 2 invalid configuration or inputs, 3 divergence abort.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time

import numpy as np

from . import figures, metrics, reference, training
from .config import ConfigError, load_config
from .network import init_xavier, load_checkpoint
from .problems import make_problem

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="causalpinn",
                                description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=None,
                   help="override the network seed of the run")
    p.add_argument("--threads", type=int, default=1,
                   help="residual-evaluation worker setting; results are "
                        "bit-identical for every value (chunks are reduced "
                        "in fixed order)")
    p.add_argument("--out-dir", default="runs/latest",
                   help="directory for run artifacts")
    sub = p.add_subparsers(dest="command", required=True)

    pt = sub.add_parser("train", help="run a training experiment from a config file")
    pt.add_argument("config", help="experiment config (.cfg)")
    pt.add_argument("--dry-run", action="store_true",
                    help="parse, validate, build the run, train 0 epochs")

    pr = sub.add_parser("reference", help="generate (or re-emit) a reference grid")
    pr.add_argument("problem", choices=("kdv", "allen-cahn", "petrov-kudrin"))
    pr.add_argument("--modes", type=int, default=None)
    pr.add_argument("--dt", type=float, default=None)
    pr.add_argument("--t-final", "--T", dest="t_final", type=float, default=None)
    pr.add_argument("--nt-out", type=int, default=100)
    pr.add_argument("--nx-out", type=int, default=None)
    pr.add_argument("--import", dest="import_path", default=None,
                    help="re-emit an existing grid file in canonical form")
    pr.add_argument("--out", required=True)

    pe = sub.add_parser("evaluate", help="score a checkpoint against a reference grid")
    pe.add_argument("--checkpoint", required=True)
    pe.add_argument("--reference", required=True)
    pe.add_argument("--times", default=None,
                    help="comma-separated snapshot times (default 0, T/2, T)")
    pe.add_argument("--ledger", default=None,
                    help="results ledger file (default <out-dir>/results_ledger.txt)")
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "train":
            return cmd_train(args)
        if args.command == "reference":
            return cmd_reference(args)
        return cmd_evaluate(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except training.DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


def cmd_train(args) -> int:
    t0 = time.perf_counter()
    cfg = load_config(args.config)
    run = cfg.to_run(seed_override=args.seed)
    if args.dry_run:
        run.stages = (training.StageSpec(0, run.stages[0].scheduler,
                                         run.stages[0].eps_init),)
    os.makedirs(args.out_dir, exist_ok=True)
    result = training.train(run, out_dir=args.out_dir)
    log.info("trained %d epochs in %.1f s (final loss %.6g)",
             result.epochs_run, result.wall_seconds, result.final_loss)

    with open(os.path.join(args.out_dir, "resolved_config.cfg"), "w") as f:
        f.write(cfg.to_text())
    figures.loss_history_figure(result.history,
                                os.path.join(args.out_dir, "loss_history.png"))

    if args.dry_run or cfg.reference == "none":
        return EXIT_OK
    grid = _resolve_reference(cfg, args.out_dir)
    pred = metrics.predict_on_grid(result.network, grid)
    times = cfg.snapshot_times or _default_snapshot_times(grid)
    report = metrics.evaluate_prediction(pred, grid, times)
    metrics.write_report(report, args.out_dir)
    figures.render_evaluation(pred, grid, report, args.out_dir)
    ledger = os.path.join(args.out_dir, "results_ledger.txt")
    line = metrics.append_ledger(
        ledger, problem=run.problem.kind, scheme=run.scheme,
        algorithm=run.algorithm, epochs=result.epochs_run, seed=run.seed,
        rel_l2=repr(report.rel_l2),
        checkpoint=os.path.join(args.out_dir, "checkpoint.txt"),
        elapsed_s=f"{time.perf_counter() - t0:.2f}",
        recorded_at=metrics.ledger_timestamp(), threads=args.threads)
    log.info("ledger: %s", line)
    return EXIT_OK


def _default_snapshot_times(grid) -> tuple:
    t0, t1 = float(grid.times[0]), float(grid.times[-1])
    return (t0, (t0 + t1) / 2.0, t1)


def _resolve_reference(cfg, out_dir):
    if cfg.reference not in ("auto", "none"):
        return reference.load_grid(cfg.reference)
    cache = os.path.join(out_dir, f"reference_{cfg.problem_kind}.grid")
    if os.path.exists(cache):
        return reference.load_grid(cache)
    grid = _generate_reference(cfg.problem_kind, cfg.problem_params, cfg.box)
    reference.save_grid(grid, cache)
    return grid


def _generate_reference(kind, params, box, modes=None, dt=None, t_final=None,
                        nt_out=None, nx_out=None):
    t_final = t_final if t_final is not None else box.t_final if box else 1.0
    nt_out = nt_out if nt_out is not None else (box.n_t if box else 100)
    if kind in ("kdv",):
        return reference.solve_kdv_pseudospectral(
            eta=params.get("eta", 1.0), mu=params.get("mu", 0.022),
            n_modes=modes or 512, dt=dt or 1e-5, t_final=t_final,
            n_t_out=nt_out, n_x_out=nx_out or (box.n_x if box else 512))
    if kind == "allen_cahn":
        return reference.solve_allen_cahn_spectral(
            n_modes=modes or 1024, dt=dt or 1e-4, t_final=t_final,
            diffusion=params.get("diffusion", 1e-4),
            reaction=params.get("reaction", 5.0),
            n_t_out=nt_out, n_x_out=nx_out or (box.n_x if box else 256))
    problem = make_problem("petrov_kudrin", **params)
    b = box
    times = np.linspace(0.0, t_final if box is None else b.t_final, nt_out + 1)
    xs = np.linspace(b.x1 if b else 0.0, b.x2 if b else 5.0,
                     (nx_out or (b.n_x if b else 256)) + 1)
    return reference.petrov_kudrin_grid(times, xs, problem.alpha, problem.eps1)


def cmd_reference(args) -> int:
    kind = {"kdv": "kdv", "allen-cahn": "allen_cahn",
            "petrov-kudrin": "petrov_kudrin"}[args.problem]
    if args.import_path:
        try:
            grid = reference.load_grid(args.import_path)
        except (OSError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        reference.save_grid(grid, args.out)
        log.info("re-emitted %s -> %s", args.import_path, args.out)
        return EXIT_OK
    defaults = {"kdv": (1.0, -1.0, 1.0), "allen_cahn": (1.0, -1.0, 1.0),
                "petrov_kudrin": (4.75, 0.0, 5.0)}[kind]
    t_final = args.t_final if args.t_final is not None else defaults[0]
    from .problems import DomainBox

    box = DomainBox(t_final, defaults[1], defaults[2],
                    args.nt_out, args.nx_out or 256)
    grid = _generate_reference(kind, {}, box, modes=args.modes, dt=args.dt,
                               t_final=t_final, nt_out=args.nt_out,
                               nx_out=args.nx_out)
    reference.save_grid(grid, args.out)
    log.info("wrote %s (%d x %d nodes, %d channel(s))", args.out,
             len(grid.times), len(grid.xs), grid.channels)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    try:
        net, meta = load_checkpoint(args.checkpoint)
        grid = reference.load_grid(args.reference)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        pred = metrics.predict_on_grid(net, grid)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    times = (tuple(float(v) for v in args.times.split(","))
             if args.times else _default_snapshot_times(grid))
    try:
        report = metrics.evaluate_prediction(pred, grid, times)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    os.makedirs(args.out_dir, exist_ok=True)
    paths = metrics.write_report(report, args.out_dir)
    paths += figures.render_evaluation(pred, grid, report, args.out_dir)
    ledger = args.ledger or os.path.join(args.out_dir, "results_ledger.txt")
    metrics.append_ledger(
        ledger, problem=meta.get("problem", "unknown"),
        scheme=meta.get("scheme", "unknown"),
        epochs=meta.get("epochs_trained", "unknown"),
        rel_l2=repr(report.rel_l2), checkpoint=args.checkpoint,
        recorded_at=metrics.ledger_timestamp())
    print(f"rel_l2 = {report.rel_l2:.6e}")
    for p in paths:
        log.info("wrote %s", p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
