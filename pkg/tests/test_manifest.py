from __future__ import annotations

import textwrap

import numpy as np
import pandas as pd
import pytest

from utils.errors import ManifestError
from utils.manifest import build_manifest_model, load_manifest, manifest_model


def _write(tmp_path, body: str, name: str = "run.ini"):
    path = tmp_path / name
    path.write_text(textwrap.dedent(body).lstrip(), encoding="utf-8")
    return path


@pytest.fixture
def data_csv(tmp_path):
    rng = np.random.default_rng(0)
    n = 24
    frame = pd.DataFrame(
        {
            "y": rng.poisson(2.0, size=n),
            "x1": rng.standard_normal(n),
            "site": np.repeat(["a", "b", "c", "d"], n // 4),
            "week": np.tile(np.arange(6), 4),
        }
    )
    path = tmp_path / "data.csv"
    frame.to_csv(path, index=False)
    return path


def test_named_experiment(tmp_path):
    path = _write(
        tmp_path,
        """
        [model]
        experiment = student-t
        [data]
        n = 12
        seed = 3
        [strategies]
        names = gaussian, vb-mean
        [oracle]
        iterations = 5000
        burn_in = 500
        [output]
        directory = results
        """,
    )
    manifest = load_manifest(path)
    assert manifest.experiment == "student-t"
    assert manifest.n == 12 and manifest.seed == 3
    assert manifest.strategies == ("gaussian", "vb-mean")
    assert manifest.oracle_iterations == 5000 and manifest.oracle_burn_in == 500
    assert manifest.output_dir == (tmp_path / "results").resolve()
    experiment = build_manifest_model(manifest)
    assert experiment.model.n == 12
    assert experiment.oracle == "mcmc"


def test_custom_model_with_random_effect(tmp_path, data_csv):
    path = _write(
        tmp_path,
        """
        [model]
        likelihood = poisson
        fixed_effects = intercept, x1
        random_effect = iid:site
        random_precision = 2.0
        [data]
        path = data.csv
        seed = 1
        """,
    )
    model, data = manifest_model(load_manifest(path))
    assert model.component_names()[:2] == ["intercept", "x1"]
    assert model.p == 2 + 4
    assert data.n == 24
    assert model.fixed_theta == pytest.approx((np.log(2.0),))
    assert model.hypers[0].name == "log_precision_site"


def test_custom_ar1_and_observation_precision(tmp_path, data_csv):
    path = _write(
        tmp_path,
        """
        [model]
        likelihood = student-t
        dof = 5
        obs_precision = 4.0
        random_effect = ar1:week
        ar1_rho = 0.7
        [data]
        path = data.csv
        seed = 1
        """,
    )
    model, _ = manifest_model(load_manifest(path))
    names = [h.name for h in model.hypers]
    assert names == ["log_precision_week", "rho_week", "log_precision_obs"]
    assert model.fixed_theta[1] == pytest.approx(2.0 * np.arctanh(0.7))
    assert model.fixed_theta[2] == pytest.approx(np.log(4.0))
    assert model.likelihood.dof == 5.0


def test_small_custom_models_use_quadrature(tmp_path, data_csv):
    path = _write(
        tmp_path,
        """
        [model]
        likelihood = binomial
        trials = 3
        fixed_effects = intercept
        [data]
        path = data.csv
        seed = 1
        """,
    )
    experiment = build_manifest_model(load_manifest(path))
    assert experiment.oracle == "quadrature"


@pytest.mark.parametrize(
    "body, line, fragment",
    [
        ("[model]\nexperiment = gpd\n[data]\nseed = 1\n[extra]\nkey = 1\n", 5, "unknown section"),
        ("[model]\nexperiment = gpd\ncolour = red\n[data]\nseed = 1\n", 3, "unknown key"),
        ("[model]\nexperiment = nope\n[data]\nseed = 1\n", 2, "unknown experiment"),
        ("[model]\nexperiment = gpd\n[data]\nn = ten\nseed = 1\n", 4, "expected int"),
        ("[model]\nexperiment = gpd\n[data]\nn = 10\n", 3, "seed is required"),
        ("[model]\nexperiment = gpd\n[data]\nseed = 1\n[strategies]\nnames = gaussian, laplace\n", 6, "laplace"),
        ("[model]\nexperiment = gpd\n[data]\nseed = 1\n[oracle]\niterations = 10\nburn_in = 20\n", 6, "must exceed"),
        ("[model]\nexperiment = gpd\n[data]\nseed = 1\n[oracle]\nenabled = perhaps\n", 6, "true/false"),
        ("[model]\nlikelihood = cauchy\n[data]\nseed = 1\n", 2, "unknown likelihood"),
        ("[model]\nexperiment = custom\n[data]\nseed = 1\n", 1, "need a likelihood"),
    ],
)
def test_errors_carry_positions(tmp_path, body, line, fragment):
    path = _write(tmp_path, body)
    with pytest.raises(ManifestError, match=fragment) as info:
        load_manifest(path)
    assert info.value.line == line
    assert f"line {line}" in str(info.value)


def test_custom_data_must_exist(tmp_path):
    path = _write(tmp_path, "[model]\nlikelihood = poisson\n[data]\npath = missing.csv\nseed = 1\n")
    with pytest.raises(ManifestError, match="not found") as info:
        load_manifest(path)
    assert info.value.key == "path"


def test_bad_random_effect(tmp_path, data_csv):
    path = _write(tmp_path, "[model]\nlikelihood = poisson\nrandom_effect = spline:x1\n[data]\npath = data.csv\nseed = 1\n")
    with pytest.raises(ManifestError, match="iid:<column>"):
        load_manifest(path)


def test_missing_column_surfaces_as_key_error(tmp_path, data_csv):
    path = _write(tmp_path, "[model]\nlikelihood = poisson\nfixed_effects = intercept, x9\n[data]\npath = data.csv\nseed = 1\n")
    with pytest.raises(KeyError, match="x9"):
        build_manifest_model(load_manifest(path))


def test_missing_manifest(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_manifest(tmp_path / "absent.ini")


def test_syntax_error(tmp_path):
    path = _write(tmp_path, "[model\nexperiment = gpd\n")
    with pytest.raises(ManifestError):
        load_manifest(path)


def test_too_many_free_hyperparameters(tmp_path, data_csv):
    body = (
        "[model]\nlikelihood = student-t\nrandom_effect = ar1:week\nfree_theta = true\n"
        "[data]\npath = data.csv\nseed = 1\n"
    )
    with pytest.raises(ManifestError, match="at most 2") as info:
        load_manifest(_write(tmp_path, body))
    assert info.value.key == "free_theta"
    assert info.value.line == 4


def test_fixed_theta_lifts_the_free_hyperparameter_limit(tmp_path, data_csv):
    body = (
        "[model]\nlikelihood = student-t\nrandom_effect = ar1:week\nfree_theta = true\nfixed_theta = 0, 1, 0\n"
        "[data]\npath = data.csv\nseed = 1\n"
    )
    model, _ = manifest_model(load_manifest(_write(tmp_path, body)))
    assert model.fixed_theta == (0.0, 1.0, 0.0)
