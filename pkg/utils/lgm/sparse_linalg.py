"""Sparse Cholesky factorization and selected inversion for SPD precision matrices.

Two backends are supported:

- CHOLMOD through ``scikit-sparse`` (optional), with approximate minimum degree
  ordering and a cached symbolic analysis per sparsity pattern;
- SuperLU from ``scipy.sparse.linalg.splu`` on the symmetrically permuted
  matrix without pivoting, which for an SPD matrix yields L D L' and hence the
  Cholesky factor L sqrt(D).

Both return a lower-triangular factor ``L`` and an ordering ``order`` with
``L @ L.T == Q[order][:, order]``.
"""

from __future__ import annotations

import threading
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve_triangular, splu

from ..errors import CholeskyFailure

try:  # optional accelerator
    from sksparse.cholmod import CholmodNotPositiveDefiniteError, analyze

    HAS_CHOLMOD = True
except ImportError:  # pragma: no cover - depends on the environment
    HAS_CHOLMOD = False

_ORDER_CACHE: dict[tuple, object] = {}
_ORDER_CACHE_LIMIT = 128
_ORDER_LOCK = threading.Lock()
_WARNED_FALLBACK = False


def _pattern_key(q: sparse.csc_matrix, backend: str) -> tuple:
    return (backend, q.shape, hash(q.indptr.tobytes()), hash(q.indices.tobytes()))


def _cache_put(key: tuple, value) -> None:
    with _ORDER_LOCK:
        if len(_ORDER_CACHE) >= _ORDER_CACHE_LIMIT:
            _ORDER_CACHE.pop(next(iter(_ORDER_CACHE)))
        _ORDER_CACHE[key] = value


def _cache_get(key: tuple):
    with _ORDER_LOCK:
        return _ORDER_CACHE.get(key)


def clear_ordering_cache() -> None:
    with _ORDER_LOCK:
        _ORDER_CACHE.clear()


def _as_sorted_csc(q) -> sparse.csc_matrix:
    if not sparse.issparse(q):
        q = sparse.csc_matrix(np.asarray(q, dtype=float))
    q = sparse.csc_matrix(q, dtype=float)
    q.sum_duplicates()
    q.sort_indices()
    if q.shape[0] != q.shape[1]:
        raise ValueError(f"Matrix must be square, got shape {q.shape}")
    return q


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower Cholesky factor of ``Q[order][:, order]`` plus a fast solver."""

    lower: sparse.csc_matrix
    order: np.ndarray
    backend: str
    _solver: object = field(repr=False, compare=False)

    @property
    def size(self) -> int:
        return int(self.lower.shape[0])

    @property
    def log_det(self) -> float:
        return float(2.0 * np.sum(np.log(self.lower.diagonal())))

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Solve Q x = b for a vector or a column block ``b``."""
        b = np.asarray(b, dtype=float)
        return np.asarray(self._solver(b), dtype=float).reshape(b.shape)

    def solve_lower(self, b: np.ndarray) -> np.ndarray:
        """z = L^{-1} P b, so that ||z||^2 = b' Q^{-1} b."""
        b = np.asarray(b, dtype=float)
        lower_csr = self.lower.tocsr()
        return spsolve_triangular(lower_csr, b[self.order], lower=True)

    def sample_transform(self, z: np.ndarray) -> np.ndarray:
        """Map standard-normal columns to draws with covariance Q^{-1}."""
        z = np.asarray(z, dtype=float)
        upper_csr = self.lower.T.tocsr()
        w = spsolve_triangular(upper_csr, z, lower=False)
        out = np.empty_like(w)
        out[self.order] = w
        return out

    def reconstruct(self) -> sparse.csc_matrix:
        permuted = (self.lower @ self.lower.T).tocsc()
        inverse = np.argsort(self.order)
        return permuted[inverse][:, inverse].tocsc()


def _cholmod_factor(q: sparse.csc_matrix) -> CholeskyFactor:
    key = _pattern_key(q, "cholmod")
    symbolic = _cache_get(key)
    if symbolic is None:
        symbolic = analyze(q, mode="simplicial", ordering_method="amd")
        _cache_put(key, symbolic)
    try:
        factor = symbolic.cholesky(q)
    except CholmodNotPositiveDefiniteError as exc:
        raise CholeskyFailure(f"Matrix is not positive definite: {exc}") from exc
    lower = sparse.csc_matrix(factor.L())
    order = np.asarray(factor.P(), dtype=int)
    return CholeskyFactor(lower=lower, order=order, backend="cholmod", _solver=factor)


def _superlu_order(q: sparse.csc_matrix) -> np.ndarray:
    key = _pattern_key(q, "superlu")
    order = _cache_get(key)
    if order is None:
        # strictly diagonally dominant matrix with the same pattern
        off = sparse.csc_matrix((np.ones_like(q.data), q.indices.copy(), q.indptr.copy()), shape=q.shape)
        off.setdiag(0.0)
        off.eliminate_zeros()
        degree = np.asarray(off.sum(axis=1)).ravel()
        pattern = (off + sparse.diags(degree + 1.0)).tocsc()
        lu = splu(pattern, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0, options={"SymmetricMode": True})
        order = np.argsort(lu.perm_c)
        _cache_put(key, order)
    return order


def _superlu_factor(q: sparse.csc_matrix) -> CholeskyFactor:
    order = _superlu_order(q)
    permuted = q[order][:, order].tocsc()
    try:
        lu = splu(
            permuted,
            permc_spec="NATURAL",
            diag_pivot_thresh=0.0,
            options={"SymmetricMode": True},
        )
    except RuntimeError as exc:
        raise CholeskyFailure(f"Matrix is singular: {exc}") from exc
    identity = np.arange(q.shape[0])
    if not (np.array_equal(lu.perm_r, identity) and np.array_equal(lu.perm_c, identity)):
        raise CholeskyFailure("Factorization required pivoting; matrix is not positive definite.")
    pivots = lu.U.diagonal()
    bad = np.flatnonzero(~(pivots > 0.0))
    if bad.size:
        first = int(order[bad[0]])
        raise CholeskyFailure(
            f"Matrix is not positive definite (non-positive pivot at index {first}).",
            index=first,
        )
    lower = (lu.L @ sparse.diags(np.sqrt(pivots))).tocsc()
    inverse = np.argsort(order)

    def _solve(b: np.ndarray) -> np.ndarray:
        x = lu.solve(np.ascontiguousarray(b[order]))
        return x[inverse]

    return CholeskyFactor(lower=lower, order=order, backend="superlu", _solver=_solve)


def cholesky_factor(q, backend: Optional[str] = None) -> CholeskyFactor:
    """Factorize a sparse SPD matrix.

    Parameters
    ----------
    q
        Symmetric positive definite matrix (sparse or dense).
    backend
        ``"cholmod"``, ``"superlu"`` or ``None`` (CHOLMOD when installed).

    Raises
    ------
    CholeskyFailure
        When ``q`` is not numerically positive definite.
    """
    q = _as_sorted_csc(q)
    if not np.all(np.isfinite(q.data)):
        raise CholeskyFailure("Matrix has non-finite entries.")
    if backend is None:
        backend = "cholmod" if HAS_CHOLMOD else "superlu"
        warn_if_fallback()
    if backend == "cholmod":
        if not HAS_CHOLMOD:
            raise ImportError("scikit-sparse is required for the cholmod backend.")
        return _cholmod_factor(q)
    if backend == "superlu":
        return _superlu_factor(q)
    raise ValueError(f"Unknown Cholesky backend: {backend}")


# ---------------------------------------------------------------------------
# Selected inverse
# ---------------------------------------------------------------------------


def _symbolic_columns(lower: sparse.csc_matrix) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Strictly-lower structure of each column, closed under the elimination tree."""
    n = lower.shape[0]
    lower = sparse.csc_matrix(lower)
    lower.sort_indices()
    struct: list[dict[int, float]] = []
    for j in range(n):
        rows = lower.indices[lower.indptr[j] : lower.indptr[j + 1]]
        vals = lower.data[lower.indptr[j] : lower.indptr[j + 1]]
        keep = rows > j
        struct.append(dict(zip(rows[keep].tolist(), vals[keep].tolist())))
    for j in range(n):
        if not struct[j]:
            continue
        parent = min(struct[j])
        for row in struct[j]:
            if row != parent and row not in struct[parent]:
                struct[parent][row] = 0.0
    rows_out = []
    vals_out = []
    for col in struct:
        keys = np.array(sorted(col), dtype=int)
        rows_out.append(keys)
        vals_out.append(np.array([col[k] for k in keys], dtype=float))
    return rows_out, vals_out


@dataclass(frozen=True)
class SelectedInverse:
    """Entries of Q^{-1} on the factor fill pattern (plus requested pairs), original indexing."""

    matrix: sparse.csc_matrix
    entries: dict = field(repr=False)

    def diagonal(self) -> np.ndarray:
        return np.asarray(self.matrix.diagonal(), dtype=float)

    def get(self, i: int, j: int) -> Optional[float]:
        key = (i, j) if i <= j else (j, i)
        return self.entries.get(key)

    def covers(self, indices: Iterable[int]) -> bool:
        idx = sorted(int(i) for i in indices)
        for a_pos, a in enumerate(idx):
            for b in idx[a_pos:]:
                if (a, b) not in self.entries:
                    return False
        return True

    def block(self, indices) -> np.ndarray:
        idx = [int(i) for i in indices]
        out = np.empty((len(idx), len(idx)))
        for r, a in enumerate(idx):
            for c, b in enumerate(idx):
                value = self.get(a, b)
                if value is None:
                    raise KeyError(f"Entry ({a}, {b}) is outside the computed pattern.")
                out[r, c] = value
        return out


def selected_inverse(
    q=None,
    pattern: Optional[Iterable[tuple[int, int]]] = None,
    factor: Optional[CholeskyFactor] = None,
) -> SelectedInverse:
    """Takahashi recursion for Q^{-1} on the Cholesky fill pattern.

    Extra ``pattern`` pairs outside the fill are filled from column solves.
    """
    if factor is None:
        if q is None:
            raise ValueError("selected_inverse needs a matrix or a factor.")
        factor = cholesky_factor(q)
    n = factor.size
    rows_per_col, vals_per_col = _symbolic_columns(factor.lower)
    diag = factor.lower.diagonal()
    sigma: list[dict[int, float]] = [dict() for _ in range(n)]

    for i in range(n - 1, -1, -1):
        rows = rows_per_col[i]
        lii = diag[i]
        if rows.size:
            l_col = vals_per_col[i]
            sub = np.empty((rows.size, rows.size))
            for r, a in enumerate(rows):
                for c in range(r, rows.size):
                    b = rows[c]
                    value = sigma[a][b] if a <= b else sigma[b][a]
                    sub[r, c] = sub[c, r] = value
            col = -(sub @ l_col) / lii
            sigma_i = sigma[i]
            for a, v in zip(rows.tolist(), col.tolist()):
                sigma_i[a] = v
            sigma_i[i] = 1.0 / (lii * lii) - float(l_col @ col) / lii
        else:
            sigma[i][i] = 1.0 / (lii * lii)

    order = factor.order
    entries: dict[tuple[int, int], float] = {}
    for j_perm, col in enumerate(sigma):
        oj = int(order[j_perm])
        for i_perm, value in col.items():
            oi = int(order[i_perm])
            key = (oi, oj) if oi <= oj else (oj, oi)
            entries[key] = value

    if pattern is not None:
        missing: dict[int, list[int]] = {}
        for a, b in pattern:
            a, b = int(a), int(b)
            key = (a, b) if a <= b else (b, a)
            if key not in entries:
                missing.setdefault(key[1], []).append(key[0])
        for col_index, row_list in missing.items():
            e = np.zeros(n)
            e[col_index] = 1.0
            column = factor.solve(e)
            for r in row_list:
                entries[(r, col_index)] = float(column[r])

    rows_idx = []
    cols_idx = []
    vals = []
    for (a, b), value in entries.items():
        rows_idx.append(a)
        cols_idx.append(b)
        vals.append(value)
        if a != b:
            rows_idx.append(b)
            cols_idx.append(a)
            vals.append(value)
    matrix = sparse.csc_matrix((vals, (rows_idx, cols_idx)), shape=(n, n))
    return SelectedInverse(matrix=matrix, entries=entries)


def dense_inverse_columns(factor: CholeskyFactor, columns: Iterable[int]) -> np.ndarray:
    """Selected full columns of Q^{-1} as a (p, k) array."""
    cols = list(int(c) for c in columns)
    rhs = np.zeros((factor.size, len(cols)))
    for k, c in enumerate(cols):
        rhs[c, k] = 1.0
    if not cols:
        return rhs
    return factor.solve(rhs)


def warn_if_fallback() -> None:
    global _WARNED_FALLBACK
    if not HAS_CHOLMOD and not _WARNED_FALLBACK:
        _WARNED_FALLBACK = True
        warnings.warn(
            "scikit-sparse is not installed; using SuperLU for sparse Cholesky factorization.",
            RuntimeWarning,
            stacklevel=2,
        )
