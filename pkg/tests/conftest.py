"""Shared small models for the test suite."""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest
from scipy import sparse

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from utils.experiments import build_experiment  # noqa: E402
from utils.lgm.likelihoods import BinomialLogit, GaussianObs, Poisson  # noqa: E402
from utils.lgm.model import (  # noqa: E402
    Ar1Effect,
    Dataset,
    FixedEffects,
    LatentModel,
    assemble_design,
)
from utils.streams import named_stream  # noqa: E402


def conjugate_case(seed: int, n: int = 12, p: int = 3, noise_precision: float = 2.0, prior_precision: float = 0.5):
    """Gaussian-likelihood regression with its closed-form posterior mean and covariance."""
    rng = named_stream(seed, "conjugate")
    x = rng.standard_normal((n, p))
    y = x @ rng.standard_normal(p) + rng.standard_normal(n) / np.sqrt(noise_precision)
    model = LatentModel(
        design=assemble_design(x),
        blocks=(FixedEffects(tuple(f"b{j}" for j in range(p)), prior_precision),),
        likelihood=GaussianObs(precision=noise_precision),
    )
    q_post = prior_precision * np.eye(p) + noise_precision * x.T @ x
    cov = np.linalg.inv(q_post)
    mean = cov @ (noise_precision * x.T @ y)
    return model, Dataset(y), mean, cov


@pytest.fixture
def conjugate():
    return conjugate_case(0)


@pytest.fixture
def poisson_case():
    rng = named_stream(11, "poisson")
    n = 40
    x = rng.standard_normal(n)
    y = rng.poisson(np.exp(0.3 + 0.5 * x)).astype(float)
    model = LatentModel(
        design=assemble_design(np.column_stack([np.ones(n), x])),
        blocks=(FixedEffects(("intercept", "x"), 0.001),),
        likelihood=Poisson(),
    )
    return model, Dataset(y)


@pytest.fixture
def student_t_case():
    experiment = build_experiment("student-t", seed=7)
    return experiment.model, experiment.data


@pytest.fixture
def ar1_case():
    """Binomial responses with two fixed effects and an AR1 field, rho fixed."""
    rng = named_stream(5, "ar1")
    n = 30
    x = rng.standard_normal(n)
    y = rng.binomial(2, 0.3, size=n).astype(float)
    model = LatentModel(
        design=assemble_design(np.column_stack([np.ones(n), x]), np.arange(n), n),
        blocks=(FixedEffects(("intercept", "x"), 0.01), Ar1Effect("u", n, rho=0.8)),
        likelihood=BinomialLogit(trials=2),
    )
    return model, Dataset(y)


def random_spd(seed: int, p: int, density: float = 0.08) -> sparse.csc_matrix:
    rng = named_stream(seed, "spd")
    upper = sparse.random(p, p, density=density, random_state=np.random.default_rng(rng.integers(2**31)))
    sym = upper + upper.T
    row_sums = np.asarray(abs(sym).sum(axis=1)).ravel()
    return (sym + sparse.diags(row_sums + 1.0)).tocsc()
