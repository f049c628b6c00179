"""Command-line runner for the uplift pressure-inversion experiment.

Usage::

    boundtv run CONFIG [--output-dir DIR] [--seed N] [--variants a,b]
    boundtv validate CONFIG
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional

import numpy as np

from . import csvio
from .config import ExperimentConfig, default_config_path, load_config, validate_config
from .diagnostics import MetricsReport, data_misfit, evaluate
from .forward import UpliftGeometry, UpliftOperator, add_noise, make_blocky_model
from .operators import Bounds
from .solver import VARIANTS, SolveResult, SolverDivergence, match_tikhonov_beta, run

logger = logging.getLogger("boundtv")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


class Problem(NamedTuple):
    geometry: UpliftGeometry
    F: UpliftOperator
    truth: np.ndarray
    clean: np.ndarray
    noisy: np.ndarray
    bounds: Bounds


def prepare_problem(cfg: ExperimentConfig) -> Problem:
    """Forward operator, true model, clean and noisy data, and bounds."""
    geom = UpliftGeometry(cfg.depth, cfg.aperture, cfg.n, cfg.n)
    F = UpliftOperator(geom, cfg.uplift_scale)
    truth = make_blocky_model(cfg.blocks, geom.model_grid)
    clean = F.apply(truth)
    noisy = add_noise(clean, cfg.sigma_frac, cfg.seed)
    return Problem(geom, F, truth, clean, noisy, Bounds.uniform(cfg.lower, cfg.upper, (cfg.n,)))


def reported_model(variant: str, result: SolveResult) -> np.ndarray:
    """The bound-constrained run reports its projection, the others ``m``."""
    return result.y if variant == "bound_constrained" else result.m


def _write_variant(out: Path, variant, coords, result, report, extra) -> None:
    csvio.write_vector(out / f"model_{variant}.csv", coords, reported_model(variant, result))
    csvio.write_history(out / f"diagnostics_{variant}.csv", result.history)
    head = [f"variant = {variant!r}\n"]
    head += [f"{k} = {v!r}\n" for k, v in extra.items()]
    (out / f"metrics_{variant}.txt").write_text(
        "".join(head) + (report.to_text() if report else ""), encoding="utf-8", newline="\n"
    )


def run_experiment(cfg: ExperimentConfig, output_dir=None) -> Dict[str, MetricsReport]:
    """Synthesize data, run the requested variants and write all artifacts.

    Raises
    ------
    SolverDivergence
        After writing whatever the diverging variant produced.
    """
    out = Path(output_dir if output_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    geom, F, truth, clean, noisy, bounds = prepare_problem(cfg)
    coords = geom.source_positions

    csvio.write_vector(out / "truth.csv", coords, truth)
    csvio.write_vector(out / "data_clean.csv", geom.observation_positions, clean)
    csvio.write_vector(out / "data_noisy.csv", geom.observation_positions, noisy)

    order = [v for v in VARIANTS if v in cfg.variants]
    results: Dict[str, SolveResult] = {}
    reports: Dict[str, MetricsReport] = {}

    def solve(variant, scfg, stride=0):
        try:
            return run(scfg, F, noisy, bounds, snapshot_stride=stride)
        except SolverDivergence as exc:
            _write_variant(out, variant, coords, exc.result, None, {"stop_reason": "diverged"})
            raise

    for variant in order:
        scfg = cfg.solvers[variant]
        extra = {}
        if variant == "tikhonov":
            beta = cfg.tikhonov_beta
            if beta is None:
                ref = results.get("bound_constrained")
                if ref is None:
                    ref = solve("bound_constrained", cfg.solvers["bound_constrained"])
                target = data_misfit(reported_model("bound_constrained", ref), F, noisy)
                beta = match_tikhonov_beta(F, noisy, target, scfg.cg_steps, scfg.spacing)
            scfg = replace(scfg, tikhonov_beta=beta)
            extra["tikhonov_beta"] = beta
        stride = cfg.snapshot_stride if variant == "bound_constrained" else 0
        logger.info("running %s", variant)
        result = solve(variant, scfg, stride)
        results[variant] = result
        report = evaluate(reported_model(variant, result), truth, F, noisy, bounds, scfg)
        reports[variant] = report
        extra.update(iterations=result.iterations, stop_reason=result.stop_reason)
        _write_variant(out, variant, coords, result, report, extra)
        if variant == "bound_constrained" and stride:
            csvio.write_snapshots(out / "convergence_snapshots.csv", coords, result.snapshots)

    csvio.write_rows(
        out / "metrics_summary.csv",
        ["variant"] + MetricsReport.csv_header().split(","),
        ([v] + list(vars(r).values()) for v, r in reports.items()),
    )
    return reports


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="boundtv",
        description="Bound-constrained TV inversion of surface uplift data.",
    )
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the experiment described by CONFIG")
    r.add_argument("config", nargs="?", default=None, help="config file (default: shipped)")
    r.add_argument("--output-dir", default=None)
    r.add_argument("--seed", type=int, default=None, help="override the noise seed")
    r.add_argument("--variants", default=None, help="comma-separated subset of variants")
    v = sub.add_parser("validate", help="check CONFIG without running")
    v.add_argument("config", nargs="?", default=None)
    sub.add_parser("default-config", help="print the shipped default config")
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    if args.command == "default-config":
        sys.stdout.write(default_config_path().read_text(encoding="utf-8"))
        return EXIT_OK

    path = Path(args.config) if args.config else default_config_path()
    try:
        errors = validate_config(path)
    except OSError as exc:
        print(f"error: cannot read {path}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "validate":
        for e in errors:
            print(e, file=sys.stderr)
        print("ok" if not errors else f"{len(errors)} error(s)")
        return EXIT_OK if not errors else EXIT_CONFIG

    if errors:
        for e in errors:
            print(e, file=sys.stderr)
        return EXIT_CONFIG
    cfg = load_config(path)
    if args.seed is not None:
        if args.seed < 0:
            print("error: --seed must be >= 0", file=sys.stderr)
            return EXIT_CONFIG
        cfg.seed = args.seed
    if args.variants:
        names = [v.strip() for v in args.variants.split(",") if v.strip()]
        bad = [v for v in names if v not in VARIANTS]
        if bad:
            print(f"error: unknown variant(s) {bad}; choose from {', '.join(VARIANTS)}", file=sys.stderr)
            return EXIT_CONFIG
        cfg.variants = names
    try:
        reports = run_experiment(cfg, args.output_dir)
    except SolverDivergence as exc:
        print(f"error: solver diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    for variant, rep in reports.items():
        print(
            f"{variant:18s} rmse={rep.rmse_vs_truth:.4f} objective={rep.objective:.6g} "
            f"stationarity={rep.stationarity_residual:.3g} "
            f"violation={rep.max_bound_violation:.3g}"
        )
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
