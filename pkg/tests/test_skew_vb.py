from __future__ import annotations

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import stats
from scipy.special import gammaln

from conftest import conjugate_case
from utils.errors import DenseLimitExceeded, GridTooNarrow
from utils.lgm.laplace import eta_moments, eta_variances, laplace_fit
from utils.sgc.distribution import SgcDistribution, sgc_logpdf, sgc_sample
from utils.sgc.skew_vb import (
    FftGrid,
    MomentCoeffTable,
    build_block_split,
    dense_covariance,
    eta_density_blocked,
    eta_density_fft,
    eta_density_table,
    expected_nll_sgc,
    fit_sgc,
    gaussian_even_moments,
    kld_sgc_gaussian,
    neg_log_jacobian,
    optimize_skewness,
    order_with_first,
    single_component_kld,
    whiten,
)
from utils.streams import named_stream


@pytest.fixture
def ar1_fit(ar1_case):
    model, data = ar1_case
    approx = laplace_fit(model, data)
    means, variances = eta_moments(approx, model.design)
    return model, data, approx, means, variances


def test_whitened_rows_reproduce_predictor_variances(ar1_fit):
    model, _, approx, _, variances = ar1_fit
    whitened = whiten(approx, model.design, order_with_first(approx.p, [3]))
    assert whitened.skew_index == 3
    assert_allclose(np.sum(whitened.coefficients**2, axis=1), variances, rtol=1e-10)


@pytest.mark.parametrize("k", [0, 1, 2, 10])
@pytest.mark.parametrize("s", [-0.6, 0.8])
def test_fft_and_blocked_paths_agree(ar1_fit, k, s):
    model, _, approx, means, variances = ar1_fit
    whitened = whiten(approx, model.design, order_with_first(approx.p, [k]))
    fft = eta_density_fft(whitened, {0: s}, means)
    split = build_block_split(approx, model.design, k, block_size=8)
    blocked = eta_density_blocked(split, s, means, variances)
    sd = np.sqrt(variances)
    for i, (a, b) in enumerate(zip(fft, blocked)):
        assert_allclose(a.x, b.x, rtol=1e-8, atol=1e-10)
        assert np.max(np.abs(a.density - b.density)) * sd[i] <= 0.01


def test_full_block_matches_fft(ar1_fit):
    model, _, approx, means, variances = ar1_fit
    whitened = whiten(approx, model.design, order_with_first(approx.p, [1]))
    fft = eta_density_fft(whitened, {0: 0.5}, means)
    split = build_block_split(approx, model.design, 1, block_size=approx.p)
    assert split.size == approx.p
    blocked = eta_density_blocked(split, 0.5, means, variances)
    for a, b in zip(fft, blocked):
        assert_allclose(a.density, b.density, atol=1e-6 * a.density.max())


def test_densities_integrate_to_one_with_predictor_moments(ar1_fit):
    model, _, approx, means, variances = ar1_fit
    whitened = whiten(approx, model.design, order_with_first(approx.p, [0]))
    grids = eta_density_fft(whitened, {0: 0.7}, means)
    for i, grid in enumerate(grids):
        assert grid.integral() == pytest.approx(1.0, abs=1e-6)
        mean, sd, _ = grid.moments()
        assert mean == pytest.approx(means[i], abs=1e-4 * np.sqrt(variances[i]))
        assert sd == pytest.approx(np.sqrt(variances[i]), rel=1e-3)


def test_zero_skewness_gives_gaussian_predictors(ar1_fit):
    model, _, approx, means, variances = ar1_fit
    whitened = whiten(approx, model.design)
    for i, grid in enumerate(eta_density_fft(whitened, {}, means)):
        expected = stats.norm.pdf(grid.x, means[i], np.sqrt(variances[i]))
        assert_allclose(grid.density, expected, atol=1e-8 * expected.max())


def test_predictor_skew_follows_its_loading(ar1_fit):
    model, _, approx, means, variances = ar1_fit
    whitened = whiten(approx, model.design, order_with_first(approx.p, [0]))
    grids = eta_density_fft(whitened, {0: 0.9}, means)
    loading = whitened.coefficients[:, 0]
    i = int(np.argmax(loading**2 / variances))
    assert np.sign(grids[i].moments()[2]) == np.sign(loading[i])


def test_narrow_grid_is_rejected(ar1_fit):
    model, _, approx, means, _ = ar1_fit
    whitened = whiten(approx, model.design)
    with pytest.raises(GridTooNarrow):
        eta_density_fft(whitened, {0: 0.5}, means, FftGrid(points=64, half_width=1.0))


@pytest.mark.parametrize("points", [10, 100, 1000])
def test_fft_grid_needs_power_of_two(points):
    with pytest.raises(ValueError):
        FftGrid(points=points)


def test_dense_limit(ar1_fit):
    _, _, approx, _, _ = ar1_fit
    with pytest.raises(DenseLimitExceeded):
        dense_covariance(approx, dense_limit=approx.p - 1)


def test_expected_nll_matches_poisson_closed_form(poisson_case):
    model, data = poisson_case
    approx = laplace_fit(model, data)
    means, variances = eta_moments(approx, model.design)
    grids = eta_density_fft(whiten(approx, model.design), {}, means)
    closed = np.sum(np.exp(means + 0.5 * variances) - data.y * means + gammaln(data.y + 1.0))
    assert expected_nll_sgc(model, data, approx.theta, grids) == pytest.approx(closed, rel=1e-6)


def test_even_moments():
    r = 0.3
    assert gaussian_even_moments((1.0, 1.0, r), 3, 3) == pytest.approx(9.0 * r + 6.0 * r**3)
    assert gaussian_even_moments((2.0, 3.0, r), 2, 2) == pytest.approx(6.0 + 2.0 * r * r)
    assert gaussian_even_moments((1.0, 1.0, r), 2, 1) == 0.0
    with pytest.raises(ValueError):
        gaussian_even_moments((1.0, 1.0, r), 4, 0)


def test_kld_vanishes_without_skewness():
    assert neg_log_jacobian(0.0) == 0.0
    assert single_component_kld(0.0, 1.7) == 0.0
    dist = SgcDistribution.from_covariance(np.zeros(2), [[1.0, 0.4], [0.4, 1.0]], [0.0, 0.0])
    assert kld_sgc_gaussian(dist) == 0.0


@pytest.mark.parametrize("s", [-0.9, -0.3, 0.2, 0.8])
def test_univariate_kld_is_positive(s):
    assert neg_log_jacobian(s) > 0.0


def test_single_skewed_component_matches_its_closed_form(ar1_fit):
    _, _, approx, _, _ = ar1_fit
    skew = np.zeros(approx.p)
    skew[5] = 0.6
    dist = SgcDistribution.from_gaussian(approx, skew)
    sigma_kk = dist.marginal_sd[5] ** 2
    factor = sigma_kk * float(approx.precision[5, 5])
    assert kld_sgc_gaussian(dist) == pytest.approx(single_component_kld(0.6, factor), rel=1e-10)


def test_kld_agrees_with_monte_carlo():
    cov = np.array([[1.0, 0.6], [0.6, 2.0]])
    dist = SgcDistribution.from_covariance(np.zeros(2), cov, [0.7, 0.0])
    draws = sgc_sample(dist, 20000, named_stream(0, "kld"))
    ratio = sgc_logpdf(dist, draws) - stats.multivariate_normal(np.zeros(2), cov).logpdf(draws)
    se = ratio.std(ddof=1) / np.sqrt(ratio.size)
    assert abs(kld_sgc_gaussian(dist) - ratio.mean()) <= 4.0 * se + 1e-3


def test_coefficient_table_bounds():
    table = MomentCoeffTable.build()
    assert table.linear_moment(0.0) == pytest.approx(1.0)
    assert table.linear_moment(0.8) < 1.0
    with pytest.raises(ValueError):
        table.coefficients_at(0.97)


@pytest.mark.parametrize("seed", range(3))
def test_gaussian_likelihood_keeps_zero_skewness(seed):
    model, data, _, _ = conjugate_case(seed)
    approx = laplace_fit(model, data)
    fit = optimize_skewness(model, data, approx.theta, approx)
    assert np.all(np.abs(fit.skewness) <= 1e-3)
    assert not fit.warnings


@pytest.mark.parametrize("path", ["fft", "blocked"])
def test_skewness_search_never_worsens_objective(poisson_case, path):
    model, data = poisson_case
    approx = laplace_fit(model, data)
    fit = optimize_skewness(model, data, approx.theta, approx, path=path)
    assert [c.index for c in fit.components] == model.fixed_effect_indices()
    for component in fit.components:
        assert component.path == path
        assert component.objective <= component.objective_at_zero
        assert abs(component.skewness) <= 0.95


def test_fit_sgc_wraps_the_corrected_core(poisson_case):
    model, data = poisson_case
    approx = laplace_fit(model, data)
    fit = optimize_skewness(model, data, approx.theta, approx)
    sgc = fit_sgc(model, data, approx.theta, approx)
    assert_allclose(sgc.mean, approx.mean)
    assert_allclose(sgc.skewness, fit.skewness)
    untouched = fit_sgc(model, data, approx.theta, approx, components=[])
    assert not np.any(untouched.skewness)


def test_unknown_density_path(poisson_case):
    model, data = poisson_case
    approx = laplace_fit(model, data)
    with pytest.raises(ValueError, match="density path"):
        optimize_skewness(model, data, approx.theta, approx, path="dense")


def test_predictor_density_table(ar1_fit):
    model, _, approx, _, _ = ar1_fit
    skew = np.zeros(approx.p)
    skew[0] = 0.4
    frame = eta_density_table(model, approx, skew, FftGrid(points=256))
    assert list(frame.columns) == ["observation", "abscissa", "density"]
    assert len(frame) == model.n * 256
    blocked = eta_density_table(model, approx, skew, FftGrid(points=256), dense_limit=1)
    assert len(blocked) == len(frame)


def test_variances_from_selected_inverse_match_dense(ar1_fit):
    model, _, approx, _, variances = ar1_fit
    sigma = dense_covariance(approx)
    a = model.design.toarray()
    assert_allclose(np.einsum("ij,jk,ik->i", a, sigma, a), variances, rtol=1e-10)
    again, _ = eta_variances(approx.factor, model.design)
    assert_allclose(again, variances)


def test_threaded_skewness_search_matches_serial(poisson_case):
    model, data = poisson_case
    approx = laplace_fit(model, data)
    serial = optimize_skewness(model, data, approx.theta, approx, n_jobs=1)
    threaded = optimize_skewness(model, data, approx.theta, approx, n_jobs=2)
    assert [c.index for c in threaded.components] == [c.index for c in serial.components]
    np.testing.assert_array_equal(threaded.skewness, serial.skewness)
    assert [c.objective for c in threaded.components] == [c.objective for c in serial.components]
