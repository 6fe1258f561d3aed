from __future__ import annotations

import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import conjugate_case
from utils.errors import CholeskyFailure, NonConvergence
from utils.experiments import build_experiment
from utils.lgm.laplace import laplace_fit, taylor_site
from utils.lgm.vb_correct import (
    CorrectionIndexSet,
    CorrectionProblem,
    solve_corrected_mean,
    vb_mean_correct,
    vb_mean_objective,
    vb_var_correct,
    vb_var_objective,
)
from utils.streams import named_stream

FAMILY_CASES = ["poisson_case", "student_t_case", "ar1_case", "gpd"]


def _problem(model, data):
    approx = laplace_fit(model, data)
    site = taylor_site(model, data, approx.theta, approx.mean)
    return CorrectionProblem.build(model, data, approx, site)


@pytest.fixture
def gpd():
    experiment = build_experiment("gpd", n=80, seed=3)
    return experiment.model, experiment.data


def _case(request, name):
    return request.getfixturevalue(name)


def _central_difference(fun, x, h=1e-6):
    out = np.empty(x.size)
    for j in range(x.size):
        e = np.zeros(x.size)
        e[j] = h * max(1.0, abs(x[j]))
        out[j] = (fun(x + e) - fun(x - e)) / (2.0 * e[j])
    return out


@pytest.mark.parametrize("name", FAMILY_CASES)
def test_mean_objective_gradient_matches_finite_differences(request, name):
    problem = _problem(*_case(request, name))
    idx = problem.indices.as_array()
    q_diag = np.asarray(problem.approx.precision.diagonal())[idx]
    rng = named_stream(len(name), "mean-gradient")
    for _ in range(25):
        delta = 0.5 * np.sqrt(q_diag) * rng.standard_normal(idx.size)
        _, grad = vb_mean_objective(problem, delta, with_grad=True)
        fd = _central_difference(lambda d: vb_mean_objective(problem, d), delta)
        assert_allclose(grad, fd, rtol=1e-4, atol=1e-6)


@pytest.mark.parametrize("name", FAMILY_CASES)
def test_var_objective_gradient_matches_finite_differences(request, name):
    problem = _problem(*_case(request, name))
    idx = problem.indices.as_array()
    q_diag = np.asarray(problem.approx.precision.diagonal())[idx]
    rng = named_stream(len(name), "var-gradient")
    for _ in range(25):
        delta = rng.uniform(-0.1, 0.5, size=idx.size) * q_diag
        _, grad = vb_var_objective(problem, delta, with_grad=True)
        fd = _central_difference(lambda d: vb_var_objective(problem, d), delta)
        assert_allclose(grad, fd, rtol=1e-4, atol=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_gaussian_likelihood_needs_no_correction(seed):
    model, data, mean, cov = conjugate_case(seed, n=15 + seed, p=2 + seed)
    problem = _problem(model, data)
    corrected = vb_mean_correct(problem)
    assert_allclose(corrected.delta, 0.0, atol=1e-8)
    assert_allclose(corrected.corrected_mean, mean, atol=1e-8)
    var = vb_var_correct(problem, corrected)
    assert_allclose(var.delta, 0.0, atol=1e-8)
    assert_allclose(var.approx.marginal_variances(), np.diag(cov), atol=1e-8)


def test_zero_delta_reproduces_laplace_mean(poisson_case):
    problem = _problem(*poisson_case)
    mean = solve_corrected_mean(problem.approx, problem.site, np.zeros(problem.p))
    assert_allclose(mean, problem.approx.mean, atol=1e-10)


@pytest.mark.parametrize("name", FAMILY_CASES)
def test_corrections_never_worsen_the_objective(request, name):
    problem = _problem(*_case(request, name))
    mean = vb_mean_correct(problem)
    assert mean.objective <= mean.objective_at_zero
    var = vb_var_correct(problem, mean)
    assert var.objective <= var.objective_at_zero
    # at delta = 0 the variance objective scores the mean-corrected Gaussian
    assert var.objective_at_zero == pytest.approx(mean.objective, rel=1e-10, abs=1e-8)


def test_mean_correction_moves_student_t_mean(student_t_case):
    problem = _problem(*student_t_case)
    corrected = vb_mean_correct(problem)
    assert corrected.objective < corrected.objective_at_zero
    assert not np.allclose(corrected.corrected_mean, problem.approx.mean, atol=1e-8)
    off = np.setdiff1d(np.arange(problem.p), problem.indices.as_array())
    assert np.all(corrected.delta[off] == 0.0)


def test_traces_start_at_zero(poisson_case):
    problem = _problem(*poisson_case)
    mean = vb_mean_correct(problem)
    var = vb_var_correct(problem, mean)
    assert mean.trace[0]["kind"] == "mean" and mean.trace[0]["iteration"] == 0
    assert var.trace[0]["kind"] == "var" and var.trace[0]["delta"] == [0.0] * len(problem.indices)
    assert [row["iteration"] for row in var.trace] == list(range(len(var.trace)))


@pytest.mark.parametrize("indices", [(), (0, 0), (-1,)])
def test_invalid_index_sets(indices):
    with pytest.raises(ValueError):
        CorrectionIndexSet(indices)


def test_index_out_of_range(poisson_case):
    model, data = poisson_case
    approx = laplace_fit(model, data)
    site = taylor_site(model, data, approx.theta, approx.mean)
    with pytest.raises(ValueError, match="out of range"):
        CorrectionProblem.build(model, data, approx, site, indices=(0, model.p))


def test_full_length_delta_must_vanish_off_the_index_set(ar1_case):
    problem = _problem(*ar1_case)
    delta = np.zeros(problem.p)
    delta[problem.p - 1] = 1.0
    with pytest.raises(ValueError, match="outside"):
        vb_mean_objective(problem, delta)


@pytest.mark.parametrize("name", ["student_t_case", "ar1_case"])
def test_variance_trace_decreases_and_diagonal_stays_positive(request, name):
    problem = _problem(*_case(request, name))
    var = vb_var_correct(problem, vb_mean_correct(problem))
    objectives = [row["objective"] for row in var.trace]
    assert all(b <= a + 1e-12 for a, b in zip(objectives, objectives[1:]))
    assert np.all(var.corrected_precision.diagonal() > 0.0)


def test_indefinite_trial_points_are_backed_off(student_t_case, monkeypatch):
    import utils.lgm.vb_correct as vb

    problem = _problem(*student_t_case)
    mean = vb_mean_correct(problem)
    idx = problem.indices.as_array()
    limit = 0.01 * np.asarray(problem.approx.precision.diagonal())[idx]
    real = vb.vb_var_objective

    def fenced(prob, delta, *args, **kwargs):
        if np.any(np.abs(prob.delta_on_set(delta)) > limit):
            raise CholeskyFailure("outside the feasible box", index=int(idx[0]))
        return real(prob, delta, *args, **kwargs)

    monkeypatch.setattr(vb, "vb_var_objective", fenced)
    var = vb.vb_var_correct(problem, mean)
    assert np.isfinite(var.objective)
    assert var.objective <= var.objective_at_zero
    assert np.all(np.abs(var.delta[idx]) <= limit * (1.0 + 1e-12))


def test_persistent_indefiniteness_is_reported(student_t_case, monkeypatch):
    import utils.lgm.vb_correct as vb

    problem = _problem(*student_t_case)
    mean = vb_mean_correct(problem)
    real = vb.vb_var_objective
    first = int(problem.indices.as_array()[0])

    def nowhere(prob, delta, *args, **kwargs):
        if np.any(prob.delta_on_set(delta) != 0.0):
            raise CholeskyFailure("indefinite", index=first)
        return real(prob, delta, *args, **kwargs)

    monkeypatch.setattr(vb, "vb_var_objective", nowhere)
    with pytest.raises(NonConvergence, match=f"index {first}"):
        vb.vb_var_correct(problem, mean)
