#!/usr/bin/env python3
"""
Fit latent Gaussian models with the approximation ladder and compare the
strategies against a sampling or quadrature oracle.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from utils.comparison import comparison_table, report_parameters, run_oracle, with_oracle_columns
from utils.errors import LgmError, ManifestError
from utils.experiments import EXPERIMENTS, Experiment, build_experiment, class_counts
from utils.inla_pipeline import STRATEGIES, InlaOptions, fit_strategies, set_verbose, step
from utils.lgm.model import validate_model
from utils.manifest import build_manifest_model, load_manifest
from utils.report_export import (
    status_payload,
    timings_payload,
    write_csv,
    write_fit_report,
    write_json,
    write_model,
    write_oracle,
)
from utils.sgc.distribution import SgcDistribution, sgc_contour_grid
from utils.sgc.skew_vb import eta_density_table

EXIT_OK = 0
EXIT_STRATEGY_FAILED = 1
EXIT_USAGE = 2


def _add_fit_flags(parser: argparse.ArgumentParser, *, oracle: bool) -> None:
    parser.add_argument("--seed", type=int, default=None, help="Integer seed for simulation and the oracle (default: 1).")
    parser.add_argument("--n", type=int, default=None, help="Sample size override (default: the experiment's own).")
    parser.add_argument(
        "--strategy",
        default=None,
        help=f"Comma-separated strategies out of {','.join(STRATEGIES)} (default: all).",
    )
    parser.add_argument("--out", default=None, help="Output directory (default: out, or the manifest's directory).")
    parser.add_argument("--fft-points", type=int, default=1024, help="FFT grid size, a power of two (default: 1024).")
    parser.add_argument(
        "--dense-limit",
        type=int,
        default=1000,
        help="Largest latent dimension for dense whitening in the skewness search (default: 1000).",
    )
    parser.add_argument(
        "--density-path",
        choices=["auto", "fft", "blocked"],
        default="auto",
        help="Predictor density path for the skewness search (default: auto).",
    )
    parser.add_argument("--n-jobs", type=int, default=1, help="Worker threads for hyperparameter points, skewness components and chains (default: 1).")
    parser.add_argument(
        "--free-theta",
        action="store_true",
        help="Estimate the hyperparameters instead of fixing them at their true values.",
    )
    parser.add_argument(
        "--export-eta",
        action="store_true",
        help="Write per-observation predictor densities of the most flexible fitted strategy.",
    )
    parser.add_argument("--quiet", action="store_true", help="Suppress STEP progress lines.")
    if oracle:
        parser.add_argument(
            "--oracle-iters",
            type=int,
            default=None,
            help="Metropolis iterations per chain, a tenth used as burn-in (default: 200000 or the manifest value).",
        )
        parser.add_argument("--oracle-chains", type=int, default=None, help="Independent oracle chains (default: 1).")
        parser.add_argument("--no-oracle", action="store_true", help="Skip the oracle run.")


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Approximate Bayesian inference for latent Gaussian models.")
    sub = parser.add_subparsers(dest="command", required=True)

    reproduce = sub.add_parser("reproduce", help="Simulate a named experiment and compare strategies with its oracle.")
    reproduce.add_argument("name", choices=sorted(EXPERIMENTS), help="Experiment to simulate.")
    _add_fit_flags(reproduce, oracle=True)

    fit = sub.add_parser("fit", help="Fit the model described by a manifest.")
    fit.add_argument("manifest", help="Path to an INI manifest.")
    _add_fit_flags(fit, oracle=False)

    compare = sub.add_parser("compare", help="Run every strategy and the oracle on a manifest's dataset.")
    compare.add_argument("manifest", help="Path to an INI manifest.")
    _add_fit_flags(compare, oracle=True)

    contour = sub.add_parser("contour", help="Write a bivariate skewed Gaussian-copula density grid.")
    contour.add_argument("--skewness", default="0.8,0.8", help="Two marginal skewness values (default: 0.8,0.8).")
    contour.add_argument(
        "--correlation",
        type=float,
        default=0.5,
        help="Off-diagonal covariance of the unit-variance core, 0.5 I + 0.5 for the default (default: 0.5).",
    )
    contour.add_argument("--points", type=int, default=101, help="Grid points per axis (default: 101).")
    contour.add_argument("--half-width", type=float, default=4.0, help="Grid half width in sd units (default: 4.0).")
    contour.add_argument("--out", default="out", help="Output directory (default: out).")
    contour.add_argument("--quiet", action="store_true", help="Suppress STEP progress lines.")
    return parser.parse_args(argv)


def _parse_strategies(raw: Optional[str], fallback: Sequence[str] = STRATEGIES) -> list[str]:
    if raw is None:
        return list(fallback)
    names = [part.strip() for part in raw.split(",") if part.strip()]
    unknown = [name for name in names if name not in STRATEGIES]
    if unknown or not names:
        raise ValueError(f"Unknown strategy {unknown[0] if unknown else raw!r}; expected {','.join(STRATEGIES)}")
    # ladder order
    return sorted(dict.fromkeys(names), key=STRATEGIES.index)


def _validate(experiment: Experiment) -> bool:
    report = validate_model(experiment.model, experiment.data)
    if report.ok:
        return True
    print("Model validation failed:", file=sys.stderr)
    for message in report.messages():
        print(f"  {message}", file=sys.stderr)
    return False


def _execute(
    experiment: Experiment,
    strategies: Sequence[str],
    options: InlaOptions,
    out_dir: Path,
    *,
    seed: int,
    export_eta: bool = False,
    oracle_settings: Optional[dict] = None,
    compare: bool = False,
) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    model, data = experiment.model, experiment.data
    step(f"Fitting {experiment.name}: n={model.n}, latent dimension {model.p}, {model.theta_dim} hyperparameter(s)")
    path = write_model(model, data, out_dir / "model.json")
    print(f"Saved model: {path}")
    if experiment.response_levels is not None:
        path = write_csv(out_dir / "class_counts.csv", class_counts(data, experiment.response_levels))
        print(f"Saved class counts: {path}")

    try:
        reports, failures = fit_strategies(model, data, strategies, options)
    except (LgmError, ValueError, np.linalg.LinAlgError) as exc:
        reports, failures = {}, {s: f"{type(exc).__name__}: {exc}" for s in strategies}
    for strategy, error in failures.items():
        print(f"STEP: {strategy} failed: {error}", file=sys.stderr)

    indices = options.correction_indices or tuple(model.default_correction_indices())
    for strategy in strategies:
        if strategy in reports:
            for path in write_fit_report(reports[strategy], out_dir, correction_indices=indices):
                print(f"Saved {path.name}: {path}")

    if export_eta and reports:
        top = max(reports, key=STRATEGIES.index)
        report = reports[top]
        step(f"Exporting predictor densities under {report.label}")
        frame = eta_density_table(model, report.final_approx, report.skewness_vector, options.fft_grid, options.dense_limit)
        path = write_csv(out_dir / "eta_densities.csv", frame)
        print(f"Saved predictor densities: {path}")

    oracle = None
    oracle_status = oracle_error = None
    if oracle_settings is not None:
        try:
            oracle = run_oracle(experiment, seed=seed, n_jobs=options.n_jobs, **oracle_settings)
            oracle_status = "ok"
            for path in write_oracle(oracle, out_dir):
                print(f"Saved {path.name}: {path}")
        except (LgmError, ValueError, np.linalg.LinAlgError) as exc:
            oracle_status, oracle_error = "infeasible", f"{type(exc).__name__}: {exc}"
            print(f"STEP: Oracle unavailable: {oracle_error}", file=sys.stderr)

    table = comparison_table({s: reports[s] for s in strategies if s in reports}, report_parameters(experiment), oracle)
    if compare:
        table = with_oracle_columns(table, oracle)
    path = write_csv(out_dir / "table.csv", table)
    print(f"Saved comparison table: {path}")
    write_json(out_dir / "timings.json", timings_payload(reports, oracle))
    path = write_json(
        out_dir / "status.json",
        status_payload(strategies, failures, oracle_status=oracle_status, oracle_error=oracle_error),
    )
    print(f"Saved status: {path}")
    return EXIT_OK if not failures else EXIT_STRATEGY_FAILED


def _oracle_settings(
    args: argparse.Namespace, *, iterations: int = 200_000, burn_in: Optional[int] = None, chains: int = 1
) -> Optional[dict]:
    if args.no_oracle:
        return None
    if args.oracle_iters is not None:
        iterations, burn_in = int(args.oracle_iters), None
    return {
        "iterations": iterations,
        "burn_in": iterations // 10 if burn_in is None else burn_in,
        "chains": args.oracle_chains if args.oracle_chains is not None else chains,
    }


def cmd_reproduce(args: argparse.Namespace) -> int:
    seed = 1 if args.seed is None else args.seed
    experiment = build_experiment(args.name, n=args.n, seed=seed, free_theta=args.free_theta)
    if not _validate(experiment):
        return EXIT_USAGE
    out_dir = Path(args.out or "out").expanduser().resolve()
    return _execute(
        experiment,
        _parse_strategies(args.strategy),
        InlaOptions.from_args(args),
        out_dir,
        seed=seed,
        export_eta=args.export_eta,
        oracle_settings=_oracle_settings(args),
    )


def _manifest_run(args: argparse.Namespace, *, compare: bool) -> int:
    manifest = load_manifest(args.manifest)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.n is not None:
        overrides["n"] = args.n
    if args.free_theta:
        overrides["free_theta"] = True
    if overrides:
        manifest = replace(manifest, **overrides)
    experiment = build_manifest_model(manifest)
    if not _validate(experiment):
        return EXIT_USAGE
    out_dir = Path(args.out).expanduser().resolve() if args.out else manifest.output_dir
    oracle_settings = None
    if compare and manifest.oracle_enabled:
        oracle_settings = _oracle_settings(
            args,
            iterations=manifest.oracle_iterations,
            burn_in=manifest.oracle_burn_in,
            chains=manifest.oracle_chains,
        )
    return _execute(
        experiment,
        _parse_strategies(args.strategy, manifest.strategies),
        InlaOptions.from_args(args),
        out_dir,
        seed=manifest.seed,
        export_eta=args.export_eta,
        oracle_settings=oracle_settings,
        compare=compare,
    )


def cmd_fit(args: argparse.Namespace) -> int:
    return _manifest_run(args, compare=False)


def cmd_compare(args: argparse.Namespace) -> int:
    """Fit a manifest model and add oracle values and relative errors to the table."""
    return _manifest_run(args, compare=True)


def cmd_contour(args: argparse.Namespace) -> int:
    skewness = [float(v) for v in args.skewness.split(",")]
    if len(skewness) != 2:
        raise ValueError(f"--skewness needs two values, got {args.skewness!r}")
    rho = float(args.correlation)
    covariance = np.array([[1.0, rho], [rho, 1.0]])
    dist = SgcDistribution.from_covariance(np.zeros(2), covariance, skewness)
    step(f"Evaluating the bivariate density on a {args.points}x{args.points} grid")
    frame = sgc_contour_grid(dist, 0, 1, points=args.points, half_width=args.half_width)
    path = write_csv(Path(args.out).expanduser().resolve() / "contour.csv", frame)
    print(f"Saved contour grid: {path}")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = parse_args(argv)
    set_verbose(not args.quiet)
    try:
        if args.command == "reproduce":
            return cmd_reproduce(args)
        if args.command == "fit":
            return cmd_fit(args)
        if args.command == "compare":
            return cmd_compare(args)
        return cmd_contour(args)
    except (ManifestError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
