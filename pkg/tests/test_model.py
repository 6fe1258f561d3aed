from __future__ import annotations

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import integrate

from utils.lgm.likelihoods import Poisson, StudentT
from utils.lgm.model import (
    Ar1Effect,
    Dataset,
    FixedEffects,
    HyperParameter,
    IidEffect,
    LatentModel,
    assemble_design,
    linear_predictor,
    model_from_dict,
    model_to_dict,
    prior_precision,
    validate_model,
)


def test_ar1_zero_correlation_is_identity():
    q = Ar1Effect("u", 2, rho=0.0).precision_matrix(np.zeros(0)).toarray()
    assert_allclose(q, np.eye(2))


@pytest.mark.parametrize("rho", [0.5, -0.3, np.sqrt(3.0) / 2.0])
def test_ar1_precision_inverts_stationary_covariance(rho):
    n = 50
    q = Ar1Effect("u", n, rho=rho).precision_matrix(np.zeros(0)).toarray()
    lag = np.abs(np.subtract.outer(np.arange(n), np.arange(n)))
    cov = rho**lag / (1.0 - rho**2)
    assert_allclose(np.linalg.inv(q), cov, atol=1e-10)


def test_ar1_correlation_from_theta():
    block = Ar1Effect("u", 4, rho_index=0)
    theta = np.array([2.0 * np.arctanh(0.6)])
    assert block.correlation(theta) == pytest.approx(0.6)
    hyper = HyperParameter("rho", kind="ar1_correlation", prior="normal", params=(0.0, 1.0))
    value = 0.9
    assert hyper.to_natural(value) == pytest.approx(2.0 * np.exp(value) / (1.0 + np.exp(value)) - 1.0)


def test_prior_precision_is_block_diagonal():
    blocks = (FixedEffects(("a", "b"), 0.001), IidEffect("u", 3, log_precision_index=0))
    q = prior_precision(blocks, np.array([np.log(4.0)])).toarray()
    assert_allclose(np.diag(q), [0.001, 0.001, 4.0, 4.0, 4.0])
    assert np.count_nonzero(q - np.diag(np.diag(q))) == 0


def test_loggamma_hyperprior_integrates_to_one():
    hyper = HyperParameter("tau", params=(1.0, 0.5))
    mass, _ = integrate.quad(lambda t: np.exp(hyper.log_density(t)), -30.0, 10.0)
    assert mass == pytest.approx(1.0, abs=1e-8)


def test_normal_hyperprior_accepts_negative_mean():
    hyper = HyperParameter("rho", kind="ar1_correlation", prior="normal", params=(-1.0, 0.5))
    assert np.isfinite(hyper.log_density(-1.0))


def test_invalid_hyperprior_rejected():
    with pytest.raises(ValueError):
        HyperParameter("tau", params=(0.0, 1.0))
    with pytest.raises(ValueError):
        HyperParameter("tau", kind="unknown")


def test_assemble_design_adds_incidence_columns():
    a = assemble_design(np.ones(4), np.array([0, 1, 1, 2]), 3).toarray()
    assert a.shape == (4, 4)
    assert_allclose(a[:, 0], 1.0)
    assert_allclose(a[:, 1:].sum(axis=1), 1.0)
    assert a[2, 2] == 1.0


def test_linear_predictor_checks_dimensions():
    a = assemble_design(np.ones((3, 2)))
    assert_allclose(linear_predictor(a, [1.0, 2.0]), 3.0)
    with pytest.raises(ValueError):
        linear_predictor(a, [1.0, 2.0, 3.0])


def _simple_model(blocks, n=4, likelihood=None):
    return LatentModel(
        design=assemble_design(np.ones(n)),
        blocks=blocks,
        likelihood=likelihood or Poisson(),
    )


def test_validate_accepts_good_model():
    model = _simple_model((FixedEffects(("b0",)),))
    report = validate_model(model, Dataset(np.array([0.0, 1.0, 2.0, 0.0])))
    assert report.ok
    assert report.messages() == []


def test_validate_reports_unsupported_response():
    model = _simple_model((FixedEffects(("b0",)),))
    report = validate_model(model, Dataset(np.array([0.0, 1.5, 2.0, 0.0])))
    assert not report.ok
    assert report.issues[0].field == "y"


def test_validate_reports_length_mismatch_and_block_sizes():
    model = _simple_model((FixedEffects(("b0", "b1")),))
    report = validate_model(model, Dataset(np.zeros(3)))
    fields = {issue.field for issue in report.issues}
    assert {"y", "blocks"} <= fields


def test_validate_reports_explosive_ar1():
    model = LatentModel(
        design=assemble_design(np.ones(3), np.arange(3), 3),
        blocks=(FixedEffects(("b0",)), Ar1Effect("u", 3, rho=1.2)),
        likelihood=Poisson(),
    )
    report = validate_model(model, Dataset(np.zeros(3)))
    assert any(issue.field == "prior_precision" for issue in report.issues)


def test_validate_reports_bad_hyper_index():
    model = _simple_model((FixedEffects(("b0",)),), likelihood=StudentT(dof=4.0, log_precision_index=2))
    report = validate_model(model, Dataset(np.zeros(4)))
    assert any(issue.field == "log_precision_index" for issue in report.issues)


def test_model_dict_round_trip():
    model = LatentModel(
        design=assemble_design(np.column_stack([np.ones(5), np.arange(5.0)]), np.array([0, 0, 1, 1, 2]), 3),
        blocks=(FixedEffects(("b0", "b1"), 0.01), Ar1Effect("u", 3, rho_index=1, log_precision_index=0)),
        likelihood=StudentT(dof=4.0),
        hypers=(
            HyperParameter("tau"),
            HyperParameter("rho", kind="ar1_correlation", prior="normal", params=(0.0, 1.0), initial=0.5),
        ),
        fixed_theta=(0.0, 0.5),
    )
    data = Dataset(np.arange(5.0))
    restored, restored_data = model_from_dict(model_to_dict(model, data))
    assert_allclose(restored.design.toarray(), model.design.toarray())
    assert restored.blocks == model.blocks
    assert restored.likelihood == model.likelihood
    assert restored.hypers == model.hypers
    assert restored.fixed_theta == model.fixed_theta
    assert_allclose(restored_data.y, data.y)


def test_model_dict_rejects_other_schema():
    payload = model_to_dict(_simple_model((FixedEffects(("b0",)),)))
    payload["schema_version"] = 99
    with pytest.raises(ValueError):
        model_from_dict(payload)


def test_component_names_and_default_indices():
    model = LatentModel(
        design=assemble_design(np.ones(3), np.arange(3), 3),
        blocks=(FixedEffects(("b0",)), IidEffect("u", 3)),
        likelihood=Poisson(),
    )
    assert model.component_names() == ["b0", "u[0]", "u[1]", "u[2]"]
    assert model.fixed_effect_indices() == [0]
    assert model.default_correction_indices() == [0, 1]
