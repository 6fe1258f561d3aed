from __future__ import annotations

import json

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import stats

from conftest import conjugate_case
from utils.errors import NonConvergence
from utils.experiments import build_experiment
from utils.inla_pipeline import (
    STRATEGIES,
    InlaOptions,
    conditional_ladder,
    explore_theta,
    fit_inla,
    fit_strategies,
    latent_marginals,
    log_theta_posterior,
)


@pytest.fixture(autouse=True)
def quiet(monkeypatch):
    monkeypatch.setattr("utils.inla_pipeline._VERBOSE", False)


@pytest.fixture(scope="module")
def free_student_t():
    experiment = build_experiment("student-t", seed=7, free_theta=True)
    return experiment.model, experiment.data


@pytest.mark.parametrize("seed", range(5))
def test_every_strategy_is_exact_for_gaussian_likelihood(seed):
    model, data, mean, cov = conjugate_case(seed, n=15 + seed, p=2 + seed)
    reports, failures = fit_strategies(model, data, STRATEGIES)
    assert not failures
    sd = np.sqrt(np.diag(cov))
    for strategy in ("gaussian", "vb-mean", "vb-mean-var"):
        marginals = reports[strategy].marginals
        assert_allclose([m.mean for m in marginals], mean, atol=1e-8)
        assert_allclose([m.sd for m in marginals], sd, atol=1e-8)
    skew = [m.skewness for m in reports["sgc-vb"].marginals]
    assert np.max(np.abs(skew)) <= 1e-3


@pytest.mark.parametrize("seed", range(3))
def test_log_marginal_likelihood_is_exact_for_gaussian_likelihood(seed):
    prior, noise = 0.5, 2.0
    model, data, _, _ = conjugate_case(seed, prior_precision=prior, noise_precision=noise)
    x = model.design.toarray()
    evidence = stats.multivariate_normal(np.zeros(model.n), x @ x.T / prior + np.eye(model.n) / noise).logpdf(data.y)
    report = fit_inla(model, data, "gaussian")
    assert report.log_marginal_likelihood == pytest.approx(evidence, rel=1e-10, abs=1e-8)


def test_fixed_theta_uses_a_single_point(student_t_case):
    model, data = student_t_case
    report = fit_inla(model, data, "gaussian")
    assert len(report.theta_grid) == 1
    assert_allclose(report.theta_grid.weights(), [1.0])
    assert_allclose(report.theta_grid.points[0], model.fixed_theta)
    assert report.hyper_marginals == ()


def test_free_theta_grid(free_student_t):
    model, data = free_student_t
    grid = explore_theta(model, data)
    assert len(grid) > 1
    assert grid.weights().sum() == pytest.approx(1.0)
    assert np.all(np.diff(np.sort(grid.points[:, 0])) > 0.0)
    best = int(np.argmax(grid.log_posteriors))
    assert_allclose(grid.points[best], grid.mode, atol=1e-12)
    assert np.all(grid.log_posteriors >= grid.log_posteriors[best] - 2.5)
    assert grid.curvature.shape == (1, 1) and grid.curvature[0, 0] > 0.0


def test_free_theta_report(free_student_t):
    model, data = free_student_t
    report = fit_inla(model, data, "gaussian")
    assert np.isfinite(report.log_marginal_likelihood)
    (hyper,) = report.hyper_marginals
    assert hyper["name"] == "log_precision_t"
    assert hyper["natural_mean"] > 0.0
    for marginal in report.marginals:
        assert marginal.density.integral() == pytest.approx(1.0, abs=1e-8)


def test_threaded_grid_matches_serial(free_student_t):
    model, data = free_student_t
    serial = fit_inla(model, data, "vb-mean", InlaOptions(n_jobs=1))
    threaded = fit_inla(model, data, "vb-mean", InlaOptions(n_jobs=3))
    assert json.dumps(serial.to_json_data()) == json.dumps(threaded.to_json_data())


def test_report_json_is_deterministic(poisson_case):
    model, data = poisson_case
    first, _ = fit_strategies(model, data, STRATEGIES)
    second, _ = fit_strategies(model, data, STRATEGIES)
    for strategy in STRATEGIES:
        a = json.dumps(first[strategy].to_json_data(), indent=2)
        b = json.dumps(second[strategy].to_json_data(), indent=2)
        assert a == b
        assert "timings" not in first[strategy].to_json_data()


def test_latent_marginals_match_shared_fit(poisson_case):
    model, data = poisson_case
    grid = explore_theta(model, data)
    single = latent_marginals(model, data, grid, "vb-mean-var")
    shared, _ = fit_strategies(model, data, ["gaussian", "vb-mean-var"])
    for a, b in zip(single.marginals, shared["vb-mean-var"].marginals):
        assert a.mean == pytest.approx(b.mean, abs=1e-12)
        assert a.sd == pytest.approx(b.sd, abs=1e-12)


def test_failed_rung_fails_every_rung_above(poisson_case):
    model, data = poisson_case
    options = InlaOptions(vb_max_iter=0)
    ladder = conditional_ladder(model, data, model.initial_theta(), STRATEGIES, options)
    assert not isinstance(ladder["gaussian"], Exception)
    for strategy in STRATEGIES[1:]:
        assert isinstance(ladder[strategy], NonConvergence)
    reports, failures = fit_strategies(model, data, STRATEGIES, options)
    assert list(reports) == ["gaussian"]
    assert sorted(failures) == sorted(STRATEGIES[1:])


def test_ladder_stops_at_the_highest_requested_rung(poisson_case):
    model, data = poisson_case
    ladder = conditional_ladder(model, data, model.initial_theta(), ["vb-mean"])
    assert list(ladder) == ["gaussian", "vb-mean"]
    assert ladder["vb-mean"].objectives["vb_mean"] <= ladder["vb-mean"].objectives["vb_mean_at_zero"]


def test_corrected_rungs_record_traces(poisson_case):
    model, data = poisson_case
    report = fit_inla(model, data, "vb-mean-var")
    kinds = {row["kind"] for row in report.traces}
    assert kinds == {"mean", "var"}
    assert report.final_approx is not None
    assert report.label == "VB-M+V"


def test_prior_term(free_student_t):
    model, data = free_student_t
    theta = np.array([0.3])
    with_prior = log_theta_posterior(model, data, theta)
    without = log_theta_posterior(model, data, theta, include_prior=False)
    assert with_prior - without == pytest.approx(model.hyperprior(theta))


def test_component_lookup(poisson_case):
    model, data = poisson_case
    report = fit_inla(model, data)
    assert report.component("x").name == "x"
    with pytest.raises(KeyError):
        report.component("missing")


def test_invalid_options_and_strategies(poisson_case):
    model, data = poisson_case
    with pytest.raises(ValueError):
        InlaOptions(density_path="dense")
    with pytest.raises(ValueError):
        InlaOptions(n_jobs=0)
    with pytest.raises(ValueError, match="Unknown strategy"):
        fit_strategies(model, data, ["laplace"])


def test_ladder_passes_worker_count_to_skewness_search(poisson_case, monkeypatch):
    import utils.inla_pipeline as pipeline

    seen = []
    real = pipeline.optimize_skewness

    def recording(*args, **kwargs):
        seen.append(kwargs.get("n_jobs"))
        return real(*args, **kwargs)

    monkeypatch.setattr(pipeline, "optimize_skewness", recording)
    model, data = poisson_case
    out = conditional_ladder(model, data, model.initial_theta(), ["sgc-vb"], InlaOptions(n_jobs=2))
    assert seen == [2]
    assert not isinstance(out["sgc-vb"], Exception)
