"""Simulated reproduction datasets and the data-frame model builder used by manifests."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.special import expit

from .lgm.likelihoods import (
    BernoulliSensSpec,
    BinomialLogit,
    GaussianObs,
    GeneralizedPareto,
    Poisson,
    StudentT,
)
from .lgm.model import (
    Ar1Effect,
    Dataset,
    FixedEffects,
    HyperParameter,
    IidEffect,
    LatentModel,
    assemble_design,
)
from .streams import named_stream

SKEW_SIM_RHO = float(np.sqrt(3.0) / 2.0)
SKEW_SIM_SIZES = (20, 50, 100)
IMBALANCED_POSITIVES = 10


@dataclass(frozen=True)
class Experiment:
    """A simulated dataset together with the model used to fit it."""

    name: str
    model: LatentModel
    data: Dataset
    truth: dict = field(default_factory=dict)
    oracle: Optional[str] = "mcmc"
    response_levels: Optional[tuple[int, ...]] = None


def _covariates(rng: np.random.Generator, n: int, k: int) -> pd.DataFrame:
    values = rng.standard_normal((n, k))
    return pd.DataFrame(values, columns=[f"x{i + 1}" for i in range(k)])


def _fixed_design(frame: pd.DataFrame, intercept: bool = True) -> tuple[np.ndarray, tuple[str, ...]]:
    columns = [np.ones(len(frame))] if intercept else []
    names = ["intercept"] if intercept else []
    for name in frame.columns:
        columns.append(frame[name].to_numpy(dtype=float))
        names.append(name)
    return np.column_stack(columns), tuple(names)


def _fixed_theta(hypers: Sequence[HyperParameter], free_theta: bool) -> Optional[tuple[float, ...]]:
    if free_theta or not hypers:
        return None
    return tuple(h.initial for h in hypers)


def _poisson_intercept(n: Optional[int], seed: int, free_theta: bool) -> Experiment:
    n = n or 300
    rng = named_stream(seed, "data")
    beta = -1.0
    u = rng.standard_normal(n)
    family = Poisson()
    y = family.simulate(None, beta + u, rng)
    hypers = (HyperParameter("log_precision_u", initial=0.0),)
    model = LatentModel(
        design=assemble_design(np.ones(n), np.arange(n), n),
        blocks=(FixedEffects(("intercept",), 0.001), IidEffect("u", n, log_precision_index=0)),
        likelihood=family,
        hypers=hypers,
        fixed_theta=_fixed_theta(hypers, free_theta),
    )
    # latent field of n + 1 components is beyond the random-walk oracle
    return Experiment("poisson-intercept", model, Dataset(y), {"intercept": beta}, oracle=None)


def _student_t(n: Optional[int], seed: int, free_theta: bool) -> Experiment:
    n = n or 10
    rng = named_stream(seed, "data")
    frame = _covariates(rng, n, 1)
    x, names = _fixed_design(frame)
    beta = np.array([0.0, 1.0])
    family = StudentT(dof=4.0, log_precision_index=0)
    y = family.simulate(np.zeros(1), x @ beta, rng)
    hypers = (HyperParameter("log_precision_t", initial=0.0),)
    model = LatentModel(
        design=assemble_design(x),
        blocks=(FixedEffects(names, 0.001),),
        likelihood=family,
        hypers=hypers,
        fixed_theta=_fixed_theta(hypers, free_theta),
    )
    return Experiment("student-t", model, Dataset(y, frame), dict(zip(names, beta)))


def _gpd(n: Optional[int], seed: int, free_theta: bool) -> Experiment:
    n = n or 10
    rng = named_stream(seed, "data")
    frame = _covariates(rng, n, 1)
    x, names = _fixed_design(frame)
    beta = np.array([1.0, 1.0])
    family = GeneralizedPareto(tail_xi=0.5, quantile_level=0.5)
    y = family.simulate(None, x @ beta, rng)
    model = LatentModel(design=assemble_design(x), blocks=(FixedEffects(names, 0.001),), likelihood=family)
    return Experiment("gpd", model, Dataset(y, frame), dict(zip(names, beta)))


def _sens_spec(n: Optional[int], seed: int, free_theta: bool) -> Experiment:
    n = n or 50
    rng = named_stream(seed, "data")
    eta = -2.0
    family = BernoulliSensSpec(sensitivity=0.8, specificity=0.985)
    y = family.simulate(None, np.full(n, eta), rng)
    model = LatentModel(
        design=assemble_design(np.ones(n)),
        blocks=(FixedEffects(("eta",), 1e-6),),
        likelihood=family,
    )
    return Experiment("sens-spec", model, Dataset(y), {"eta": eta}, oracle="quadrature")


def _skew_sim(n: Optional[int], seed: int, free_theta: bool) -> Experiment:
    n = n or 20
    rng = named_stream(seed, "data")
    frame = _covariates(rng, n, 3)
    x, names = _fixed_design(frame)
    beta = np.array([-2.0, -3.0, -3.0, 1.0])
    u = np.empty(n)
    u[0] = rng.standard_normal() / np.sqrt(1.0 - SKEW_SIM_RHO**2)
    for i in range(1, n):
        u[i] = SKEW_SIM_RHO * u[i - 1] + rng.standard_normal()
    family = BinomialLogit(trials=2)
    y = family.simulate(None, x @ beta + u, rng)
    hypers = (
        HyperParameter(
            "rho_u",
            kind="ar1_correlation",
            prior="normal",
            params=(0.0, 1.0),
            initial=float(2.0 * np.arctanh(SKEW_SIM_RHO)),
        ),
    )
    model = LatentModel(
        design=assemble_design(x, np.arange(n), n),
        blocks=(FixedEffects(names, 0.01), Ar1Effect("u", n, rho_index=0)),
        likelihood=family,
        hypers=hypers,
        fixed_theta=_fixed_theta(hypers, free_theta),
    )
    truth = dict(zip(names, beta))
    truth["rho_u"] = SKEW_SIM_RHO
    return Experiment("skew-sim", model, Dataset(y, frame), truth, response_levels=(0, 1, 2))


def _imbalanced_logistic(n: Optional[int], seed: int, free_theta: bool) -> Experiment:
    n = n or 90
    if n <= IMBALANCED_POSITIVES:
        raise ValueError(f"imbalanced-logistic needs n > {IMBALANCED_POSITIVES}, got {n}")
    rng = named_stream(seed, "data")
    frame = _covariates(rng, n, 3)
    x, names = _fixed_design(frame)
    beta = np.array([-2.5, 1.0, -1.0, 0.5])
    pi = expit(x @ beta)
    positives = rng.choice(n, size=IMBALANCED_POSITIVES, replace=False, p=pi / pi.sum())
    y = np.zeros(n)
    y[positives] = 1.0
    model = LatentModel(
        design=assemble_design(x),
        blocks=(FixedEffects(names, 0.001),),
        likelihood=BinomialLogit(trials=1),
    )
    return Experiment("imbalanced-logistic", model, Dataset(y, frame), dict(zip(names, beta)), response_levels=(0, 1))


EXPERIMENTS: dict[str, Callable[[Optional[int], int, bool], Experiment]] = {
    "poisson-intercept": _poisson_intercept,
    "student-t": _student_t,
    "gpd": _gpd,
    "sens-spec": _sens_spec,
    "skew-sim": _skew_sim,
    "imbalanced-logistic": _imbalanced_logistic,
}


def build_experiment(name: str, *, n: Optional[int] = None, seed: int = 1, free_theta: bool = False) -> Experiment:
    """Simulate one reproduction dataset from the ``data`` stream of ``seed``."""
    try:
        builder = EXPERIMENTS[name]
    except KeyError as exc:
        raise ValueError(f"Unknown experiment {name!r}; expected one of {', '.join(EXPERIMENTS)}") from exc
    if n is not None and n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return builder(n, int(seed), bool(free_theta))


def class_counts(data: Dataset, levels: Sequence[int]) -> pd.DataFrame:
    counts = pd.Series(data.y.astype(int)).value_counts()
    return pd.DataFrame(
        {
            "n": data.n,
            "level": list(levels),
            "count": [int(counts.get(level, 0)) for level in levels],
        }
    )


# ---------------------------------------------------------------------------
# Models from tabular data
# ---------------------------------------------------------------------------


def custom_hyper_count(likelihood: str, random_effect: str = "none") -> int:
    """Hyperparameters ``model_from_frame`` creates for a likelihood and random effect."""
    count = {"iid": 1, "ar1": 2}.get(random_effect.partition(":")[0], 0)
    return count + (1 if likelihood in ("student-t", "gaussian") else 0)


def make_likelihood(name: str, options: dict, hypers: list[HyperParameter]):
    """Likelihood family from manifest keys; appends its precision hyper when it has one."""
    if name == "poisson":
        return Poisson()
    if name == "student-t":
        hypers.append(HyperParameter("log_precision_obs", initial=float(np.log(options.get("obs_precision", 1.0)))))
        return StudentT(dof=float(options.get("dof", 4.0)), log_precision_index=len(hypers) - 1)
    if name == "gaussian":
        hypers.append(HyperParameter("log_precision_obs", initial=float(np.log(options.get("obs_precision", 1.0)))))
        return GaussianObs(log_precision_index=len(hypers) - 1)
    if name == "gpd":
        return GeneralizedPareto(
            tail_xi=float(options.get("tail_xi", 0.5)),
            quantile_level=float(options.get("quantile_level", 0.5)),
        )
    if name == "sens-spec":
        return BernoulliSensSpec(
            sensitivity=float(options.get("sensitivity", 0.8)),
            specificity=float(options.get("specificity", 0.985)),
        )
    if name == "binomial":
        return BinomialLogit(trials=int(options.get("trials", 1)))
    raise ValueError(f"Unknown likelihood {name!r}")


def model_from_frame(
    frame: pd.DataFrame,
    *,
    response: str,
    likelihood: str,
    fixed_effects: Sequence[str] = ("intercept",),
    fixed_precision: float = 0.001,
    random_effect: str = "none",
    random_precision: float = 1.0,
    ar1_rho: float = 0.5,
    fixed_theta: Optional[Sequence[float]] = None,
    free_theta: bool = False,
    likelihood_options: Optional[dict] = None,
) -> tuple[LatentModel, Dataset]:
    """Build [X | Z] and the prior blocks from columns of ``frame``.

    ``random_effect`` is ``"none"``, ``"iid:<column>"`` or ``"ar1:<column>"``.
    Hyperparameters are held at their initial values unless ``free_theta``.
    """
    if response not in frame.columns:
        raise KeyError(f"Response column {response!r} not found in data.")
    columns, names = [], []
    for name in fixed_effects:
        if name == "intercept":
            columns.append(np.ones(len(frame)))
        elif name in frame.columns:
            columns.append(frame[name].to_numpy(dtype=float))
        else:
            raise KeyError(f"Covariate column {name!r} not found in data.")
        names.append(name)
    x = np.column_stack(columns) if columns else np.empty((len(frame), 0))

    hypers: list[HyperParameter] = []
    blocks: list = [FixedEffects(tuple(names), float(fixed_precision))] if names else []
    levels = size = None
    if random_effect != "none":
        kind, _, column = random_effect.partition(":")
        if kind not in ("iid", "ar1") or not column:
            raise ValueError(f"random_effect must be none, iid:<column> or ar1:<column>, got {random_effect!r}")
        if column not in frame.columns:
            raise KeyError(f"Random-effect column {column!r} not found in data.")
        codes, uniques = pd.factorize(frame[column], sort=True)
        levels, size = codes, len(uniques)
        hypers.append(HyperParameter(f"log_precision_{column}", initial=float(np.log(random_precision))))
        if kind == "iid":
            blocks.append(IidEffect(column, size, log_precision_index=len(hypers) - 1))
        else:
            hypers.append(
                HyperParameter(
                    f"rho_{column}",
                    kind="ar1_correlation",
                    prior="normal",
                    params=(0.0, 1.0),
                    initial=float(2.0 * np.arctanh(ar1_rho)),
                )
            )
            blocks.append(
                Ar1Effect(column, size, rho_index=len(hypers) - 1, log_precision_index=len(hypers) - 2)
            )
    family = make_likelihood(likelihood, dict(likelihood_options or {}), hypers)

    if fixed_theta is not None:
        theta = tuple(float(v) for v in fixed_theta)
    else:
        theta = _fixed_theta(hypers, free_theta)
    model = LatentModel(
        design=assemble_design(x, levels, size),
        blocks=tuple(blocks),
        likelihood=family,
        hypers=tuple(hypers),
        fixed_theta=theta,
    )
    covariates = frame.drop(columns=[response])
    return model, Dataset(frame[response].to_numpy(dtype=float), covariates)
