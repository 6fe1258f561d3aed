"""Oracle runs and the strategy-versus-oracle comparison table."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from .density import DensityGrid
from .errors import LgmError
from .experiments import Experiment
from .inla_pipeline import FitReport, step
from .oracle import Chain, chain_summary, exact_posterior_quadrature, run_chains

STATISTICS = ("mean", "sd", "skewness")
TABLE_COLUMNS = ["parameter", "statistic", "strategy", "value"]
COMPARE_COLUMNS = TABLE_COLUMNS + ["oracle_value", "relative_error"]


@dataclass(frozen=True)
class OracleResult:
    kind: str
    names: tuple[str, ...]
    mean: np.ndarray
    sd: np.ndarray
    skewness: np.ndarray
    seconds: float
    densities: tuple[DensityGrid, ...] = field(default=(), repr=False)
    chains: tuple[Chain, ...] = field(default=(), repr=False)
    summary: Optional[dict] = None
    warnings: tuple[str, ...] = ()

    def value(self, name: str, statistic: str) -> float:
        i = self.names.index(name)
        return float({"mean": self.mean, "sd": self.sd, "skewness": self.skewness}[statistic][i])


def report_parameters(experiment: Experiment) -> list[str]:
    names = experiment.model.component_names()
    fixed = experiment.model.fixed_effect_indices()
    return [names[i] for i in fixed] if fixed else names


def run_oracle(
    experiment: Experiment,
    *,
    iterations: int = 200_000,
    burn_in: int = 20_000,
    chains: int = 1,
    seed: int = 0,
    n_jobs: int = 1,
) -> OracleResult:
    """Quadrature for one- and two-component fields, random-walk Metropolis otherwise."""
    model, data = experiment.model, experiment.data
    if experiment.oracle is None:
        raise LgmError(f"No oracle is feasible for {experiment.name} (latent dimension {model.p}).")
    started = time.perf_counter()
    if experiment.oracle == "quadrature":
        step(f"Oracle: grid quadrature of the {model.p}-component posterior")
        grid = exact_posterior_quadrature(model, data, model.fixed_theta)
        densities = (grid,) if isinstance(grid, DensityGrid) else (grid.marginal(0), grid.marginal(1))
        moments = np.array([d.moments() for d in densities])
        return OracleResult(
            kind="quadrature",
            names=tuple(model.component_names()),
            mean=moments[:, 0],
            sd=moments[:, 1],
            skewness=moments[:, 2],
            seconds=time.perf_counter() - started,
            densities=densities,
        )

    step(f"Oracle: {chains} random-walk Metropolis chain(s) of {iterations} iterations")
    runs = run_chains(
        model,
        data,
        model.fixed_theta,
        iterations=iterations,
        burn_in=burn_in,
        seed=seed,
        chains=chains,
        n_jobs=n_jobs,
    )
    summary = chain_summary(runs)
    return OracleResult(
        kind="mcmc",
        names=summary.names,
        mean=summary.mean,
        sd=summary.sd,
        skewness=summary.skewness,
        seconds=time.perf_counter() - started,
        densities=summary.histograms,
        chains=tuple(runs),
        summary=summary.to_json_data(),
        warnings=summary.warnings,
    )


def comparison_table(
    reports: Mapping[str, FitReport],
    parameters: Sequence[str],
    oracle: Optional[OracleResult] = None,
) -> pd.DataFrame:
    """Long table with one row per (parameter, statistic, strategy), oracle rows last."""
    rows = []
    for name in parameters:
        for statistic in STATISTICS:
            for strategy, report in reports.items():
                marginal = report.component(name)
                rows.append(
                    {
                        "parameter": name,
                        "statistic": statistic,
                        "strategy": strategy,
                        "value": float(getattr(marginal, statistic)),
                    }
                )
            if oracle is not None and name in oracle.names:
                rows.append(
                    {"parameter": name, "statistic": statistic, "strategy": oracle.kind, "value": oracle.value(name, statistic)}
                )
    for strategy, report in reports.items():
        rows.append(
            {"parameter": "all", "statistic": "time-seconds", "strategy": strategy, "value": report.timings["total"]}
        )
    if oracle is not None:
        rows.append({"parameter": "all", "statistic": "time-seconds", "strategy": oracle.kind, "value": oracle.seconds})
    return pd.DataFrame(rows, columns=TABLE_COLUMNS)


def with_oracle_columns(table: pd.DataFrame, oracle: Optional[OracleResult]) -> pd.DataFrame:
    """Append the oracle value and |value - oracle| / |oracle| to every strategy row."""
    out = table.copy()
    if oracle is None:
        out["oracle_value"] = np.nan
        out["relative_error"] = np.nan
        return out[COMPARE_COLUMNS]
    reference = {}
    for name in oracle.names:
        for statistic in STATISTICS:
            reference[(name, statistic)] = oracle.value(name, statistic)
    reference[("all", "time-seconds")] = oracle.seconds
    out["oracle_value"] = [reference.get((p, s), np.nan) for p, s in zip(out["parameter"], out["statistic"])]
    with np.errstate(divide="ignore", invalid="ignore"):
        out["relative_error"] = np.abs(out["value"] - out["oracle_value"]) / np.abs(out["oracle_value"])
    out.loc[out["strategy"] == oracle.kind, "relative_error"] = np.nan
    return out[COMPARE_COLUMNS]
