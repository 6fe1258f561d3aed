from __future__ import annotations

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import sparse

from conftest import random_spd
from utils.errors import CholeskyFailure
from utils.lgm.model import Ar1Effect
from utils.lgm.sparse_linalg import (
    HAS_CHOLMOD,
    cholesky_factor,
    clear_ordering_cache,
    dense_inverse_columns,
    selected_inverse,
)
from utils.streams import named_stream

BACKENDS = ["superlu"] + (["cholmod"] if HAS_CHOLMOD else [])


@pytest.mark.parametrize("backend", BACKENDS)
def test_factor_reconstructs_and_solves(backend):
    q = random_spd(1, 40)
    factor = cholesky_factor(q, backend=backend)
    assert_allclose(factor.reconstruct().toarray(), q.toarray(), atol=1e-10)
    b = named_stream(1, "rhs").standard_normal(40)
    assert_allclose(factor.solve(b), np.linalg.solve(q.toarray(), b), rtol=1e-9, atol=1e-12)
    assert factor.log_det == pytest.approx(np.linalg.slogdet(q.toarray())[1], rel=1e-10)


def test_solve_lower_gives_quadratic_form():
    q = random_spd(2, 25)
    factor = cholesky_factor(q)
    b = named_stream(2, "rhs").standard_normal(25)
    z = factor.solve_lower(b)
    assert float(z @ z) == pytest.approx(float(b @ np.linalg.solve(q.toarray(), b)), rel=1e-10)


def test_sample_transform_has_inverse_covariance():
    q = random_spd(3, 6, density=0.3)
    factor = cholesky_factor(q)
    z = named_stream(3, "samples").standard_normal((6, 200_000))
    draws = factor.sample_transform(z)
    assert_allclose(np.cov(draws), np.linalg.inv(q.toarray()), atol=0.02)


@pytest.mark.parametrize("seed", range(50))
def test_selected_inverse_diagonal_matches_dense(seed):
    p = int(named_stream(seed, "size").integers(5, 101))
    q = random_spd(seed, p)
    sel = selected_inverse(q)
    assert_allclose(sel.diagonal(), np.diag(np.linalg.inv(q.toarray())), rtol=1e-10, atol=1e-10)


def test_selected_inverse_entries_on_pattern_match_dense():
    q = random_spd(7, 60)
    dense = np.linalg.inv(q.toarray())
    sel = selected_inverse(q)
    for (i, j), value in sel.entries.items():
        assert value == pytest.approx(dense[i, j], abs=1e-10)


def test_selected_inverse_fills_requested_pairs():
    q = random_spd(8, 30, density=0.02)
    dense = np.linalg.inv(q.toarray())
    sel = selected_inverse(q, pattern=[(0, 29), (5, 17)])
    assert sel.covers([0, 29])
    assert sel.get(29, 0) == pytest.approx(dense[0, 29], abs=1e-12)
    assert_allclose(sel.block([5, 17]), dense[np.ix_([5, 17], [5, 17])], atol=1e-12)


def test_ar1_selected_inverse_matches_dense():
    q = Ar1Effect("u", 50, rho=0.7).precision_matrix(np.zeros(0))
    sel = selected_inverse(q)
    dense = np.linalg.inv(q.toarray())
    assert np.max(np.abs(sel.diagonal() - np.diag(dense))) <= 1e-10
    assert sel.get(10, 11) == pytest.approx(dense[10, 11], abs=1e-10)


def test_dense_inverse_columns():
    q = random_spd(9, 20)
    cols = dense_inverse_columns(cholesky_factor(q), [3, 11])
    assert_allclose(cols, np.linalg.inv(q.toarray())[:, [3, 11]], atol=1e-12)


def test_indefinite_matrix_raises():
    q = sparse.csc_matrix(np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(CholeskyFailure):
        cholesky_factor(q)


def test_non_finite_matrix_raises():
    q = sparse.csc_matrix(np.array([[1.0, 0.0], [0.0, np.inf]]))
    with pytest.raises(CholeskyFailure):
        cholesky_factor(q)


def test_ordering_cache_reused_for_same_pattern():
    clear_ordering_cache()
    q = random_spd(10, 30)
    first = cholesky_factor(q, backend="superlu")
    second = cholesky_factor(q * 2.0, backend="superlu")
    np.testing.assert_array_equal(first.order, second.order)
    assert second.log_det == pytest.approx(first.log_det + 30 * np.log(2.0), rel=1e-12)


def test_superlu_ordering_leaves_input_untouched():
    clear_ordering_cache()
    q = sparse.csc_matrix(np.array([[2.0, 0.3], [0.3, 1.5]]))
    dense = q.toarray()
    indices, indptr = q.indices.copy(), q.indptr.copy()
    factor = cholesky_factor(q, backend="superlu")
    np.testing.assert_array_equal(q.indices, indices)
    np.testing.assert_array_equal(q.indptr, indptr)
    assert_allclose(q.toarray(), dense)
    assert_allclose(factor.reconstruct().toarray(), dense, atol=1e-12)
