from __future__ import annotations

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import stats

from utils.errors import LikelihoodDomainError
from utils.lgm.likelihoods import (
    BernoulliSensSpec,
    BinomialLogit,
    GaussianObs,
    GeneralizedPareto,
    Poisson,
    StudentT,
    family_from_dict,
    family_to_dict,
    gpd_scale,
    loglik_eval,
)
from utils.streams import named_stream

THETA = np.zeros(0)

CASES = [
    (Poisson(), np.array([0.0, 1.0, 3.0, 7.0])),
    (StudentT(dof=4.0, precision=1.5), np.array([-2.0, 0.1, 0.7, 4.0])),
    (GeneralizedPareto(tail_xi=0.5), np.array([0.2, 1.0, 3.5, 9.0])),
    (BernoulliSensSpec(sensitivity=0.8, specificity=0.985), np.array([0.0, 1.0, 0.0, 1.0])),
    (BinomialLogit(trials=2), np.array([0.0, 1.0, 2.0, 1.0])),
    (GaussianObs(precision=2.0), np.array([-1.0, 0.0, 0.5, 2.0])),
]
IDS = [family.name for family, _ in CASES]


@pytest.mark.parametrize("family,y", CASES, ids=IDS)
def test_derivatives_match_finite_differences(family, y):
    eta = np.array([-0.7, 0.1, 0.4, 1.2])
    h = 1e-5
    ll, d1, d2 = loglik_eval(family, THETA, y, eta)
    up, d1_up, _ = loglik_eval(family, THETA, y, eta + h)
    down, d1_down, _ = loglik_eval(family, THETA, y, eta - h)
    assert_allclose(d1, (up - down) / (2 * h), rtol=1e-6, atol=1e-7)
    assert_allclose(d2, (d1_up - d1_down) / (2 * h), rtol=1e-5, atol=1e-6)


def test_poisson_matches_scipy():
    y = np.array([0.0, 2.0, 5.0])
    eta = np.array([0.3, -0.2, 1.1])
    ll, _, _ = loglik_eval(Poisson(), THETA, y, eta)
    assert_allclose(ll, stats.poisson.logpmf(y, np.exp(eta)), rtol=1e-12)


def test_student_t_matches_scipy():
    family = StudentT(dof=4.0, precision=2.0)
    y = np.array([-1.0, 0.3, 2.5])
    eta = np.array([0.0, 0.5, -0.5])
    ll, _, _ = loglik_eval(family, THETA, y, eta)
    expected = stats.t.logpdf(y, df=4.0, loc=eta, scale=1.0 / np.sqrt(2.0))
    assert_allclose(ll, expected, rtol=1e-12)


def test_student_t_reads_precision_from_theta():
    family = StudentT(dof=4.0, log_precision_index=0)
    y, eta = np.array([1.0]), np.array([0.0])
    ll_theta, _, _ = loglik_eval(family, np.array([np.log(3.0)]), y, eta)
    ll_fixed, _, _ = loglik_eval(StudentT(dof=4.0, precision=3.0), THETA, y, eta)
    assert_allclose(ll_theta, ll_fixed, rtol=1e-12)


def test_gpd_median_is_exp_eta():
    eta = np.array([-0.5, 0.0, 1.3])
    sigma = gpd_scale(eta, 0.5, 0.5)
    median = stats.genpareto.median(c=0.5, scale=sigma)
    assert_allclose(median, np.exp(eta), rtol=1e-10)


def test_gpd_scale_reference_value():
    sigma = float(gpd_scale(0.0, 0.1, 0.5))
    assert sigma == pytest.approx(0.1 / (2.0**0.1 - 1.0), rel=1e-12)
    assert round(sigma, 4) == 1.3933


def test_gpd_matches_scipy():
    family = GeneralizedPareto(tail_xi=0.5)
    y = np.array([0.1, 1.0, 5.0])
    eta = np.array([0.2, 0.0, 1.0])
    ll, _, _ = loglik_eval(family, THETA, y, eta)
    expected = stats.genpareto.logpdf(y, c=0.5, scale=gpd_scale(eta, 0.5, 0.5))
    assert_allclose(ll, expected, rtol=1e-10)


def test_sens_spec_probability():
    family = BernoulliSensSpec(sensitivity=0.8, specificity=0.985)
    ll, _, _ = loglik_eval(family, THETA, np.array([1.0]), np.array([0.0]))
    assert_allclose(np.exp(ll), 0.8 * 0.5 + 0.015 * 0.5, rtol=1e-12)


def test_binomial_matches_scipy():
    y = np.array([0.0, 1.0, 2.0])
    eta = np.array([-1.0, 0.0, 2.0])
    ll, _, _ = loglik_eval(BinomialLogit(trials=2), THETA, y, eta)
    assert_allclose(ll, stats.binom.logpmf(y, 2, 1.0 / (1.0 + np.exp(-eta))), rtol=1e-12)


@pytest.mark.parametrize(
    "family,y",
    [
        (Poisson(), np.array([1.5])),
        (Poisson(), np.array([-1.0])),
        (BinomialLogit(trials=2), np.array([3.0])),
        (BernoulliSensSpec(0.8, 0.985), np.array([0.5])),
        (GeneralizedPareto(tail_xi=0.5), np.array([-0.1])),
    ],
)
def test_out_of_support_response_raises(family, y):
    with pytest.raises(LikelihoodDomainError):
        loglik_eval(family, THETA, y, np.zeros(1))


def test_non_finite_eta_rejected():
    with pytest.raises(ValueError):
        loglik_eval(Poisson(), THETA, np.array([1.0]), np.array([np.nan]))


@pytest.mark.parametrize(
    "factory",
    [
        lambda: StudentT(dof=0.0),
        lambda: GeneralizedPareto(tail_xi=-0.1),
        lambda: GeneralizedPareto(tail_xi=0.5, quantile_level=1.0),
        lambda: BernoulliSensSpec(0.4, 0.5),
        lambda: BinomialLogit(trials=0),
    ],
)
def test_invalid_parameters_rejected(factory):
    with pytest.raises(ValueError):
        factory()


@pytest.mark.parametrize("family,y", CASES, ids=IDS)
def test_family_dict_round_trip(family, y):
    assert family_from_dict(family_to_dict(family)) == family


def test_simulated_responses_lie_in_support():
    rng = named_stream(3, "simulate")
    eta = np.linspace(-2.0, 2.0, 50)
    for family, _ in CASES:
        y = family.simulate(np.zeros(1), eta, rng)
        assert not np.any(family.support_violations(y))
