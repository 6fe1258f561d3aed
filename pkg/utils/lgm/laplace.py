"""Laplace-method Gaussian approximation of p(f | y, theta)."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np
from scipy import sparse

from ..errors import CholeskyFailure, IndefiniteSystem, NonConvergence
from .likelihoods import loglik_eval
from .model import Dataset, LatentModel, linear_predictor
from .sparse_linalg import CholeskyFactor, SelectedInverse, cholesky_factor, selected_inverse

MAX_HALVINGS = 20


@dataclass(frozen=True)
class TaylorSite:
    """Second-order expansion coefficients of the log-likelihood at ``f0``."""

    f0: np.ndarray
    eta: np.ndarray
    c_diag: np.ndarray
    b_vec: np.ndarray
    rhs: np.ndarray

    @property
    def n(self) -> int:
        return int(self.c_diag.size)


@dataclass(frozen=True)
class GaussianApprox:
    mean: np.ndarray
    precision: sparse.csc_matrix
    factor: CholeskyFactor
    theta: np.ndarray
    iterations: int = 0

    @property
    def p(self) -> int:
        return int(self.mean.size)

    @property
    def log_det(self) -> float:
        return self.factor.log_det

    @property
    def cholesky(self) -> sparse.csc_matrix:
        return self.factor.lower

    @cached_property
    def selected(self) -> SelectedInverse:
        return selected_inverse(factor=self.factor)

    def marginal_variances(self) -> np.ndarray:
        return self.selected.diagonal()

    def with_precision(self, precision: sparse.spmatrix, mean: Optional[np.ndarray] = None) -> "GaussianApprox":
        q = sparse.csc_matrix(precision)
        return GaussianApprox(
            mean=self.mean if mean is None else np.asarray(mean, dtype=float),
            precision=q,
            factor=cholesky_factor(q),
            theta=self.theta,
            iterations=self.iterations,
        )

    def with_mean(self, mean: np.ndarray) -> "GaussianApprox":
        out = GaussianApprox(
            mean=np.asarray(mean, dtype=float),
            precision=self.precision,
            factor=self.factor,
            theta=self.theta,
            iterations=self.iterations,
        )
        if "selected" in self.__dict__:
            out.__dict__["selected"] = self.selected
        return out

    def to_json_data(self) -> dict:
        coo = sparse.triu(self.precision).tocoo()
        return {
            "schema_version": 1,
            "theta": [float(v) for v in np.atleast_1d(self.theta)],
            "mean": [float(v) for v in self.mean],
            "log_det": self.log_det,
            "precision": {
                "shape": list(self.precision.shape),
                "row": coo.row.tolist(),
                "col": coo.col.tolist(),
                "value": [float(v) for v in coo.data],
                "storage": "upper-triangle",
            },
        }


def taylor_site(model: LatentModel, data: Dataset, theta, f0) -> TaylorSite:
    f0 = np.asarray(f0, dtype=float)
    if not np.all(np.isfinite(f0)):
        raise ValueError("Expansion point must be finite.")
    eta = linear_predictor(model.design, f0)
    _, d1, d2 = loglik_eval(model.likelihood, theta, data.y, eta)
    b_vec = d1 - d2 * eta
    rhs = np.asarray(model.design.T @ b_vec, dtype=float).ravel()
    return TaylorSite(f0=f0, eta=eta, c_diag=-d2, b_vec=b_vec, rhs=rhs)


def log_joint(model: LatentModel, data: Dataset, theta, f, q_prior: sparse.spmatrix) -> float:
    """log p(y | f, theta) - f'Q f / 2, dropping the prior normalizer."""
    eta = linear_predictor(model.design, f)
    ll, _, _ = loglik_eval(model.likelihood, theta, data.y, eta)
    return float(np.sum(ll) - 0.5 * f @ (q_prior @ f))


def _gradient(model: LatentModel, data: Dataset, theta, f, q_prior) -> np.ndarray:
    eta = linear_predictor(model.design, f)
    _, d1, _ = loglik_eval(model.likelihood, theta, data.y, eta)
    return model.design.T @ d1 - q_prior @ f


def _system(a: sparse.csr_matrix, c_diag: np.ndarray, q_prior) -> sparse.csc_matrix:
    return (a.T @ sparse.diags(c_diag) @ a + q_prior).tocsc()


def _newton_target(model, site: TaylorSite, q_prior) -> np.ndarray:
    a = model.design
    try:
        factor = cholesky_factor(_system(a, site.c_diag, q_prior))
        return factor.solve(a.T @ site.b_vec)
    except CholeskyFailure:
        # clip negative curvature; the damped step below restores ascent
        c_clip = np.clip(site.c_diag, 0.0, None)
        b_clip = site.b_vec + (c_clip - site.c_diag) * site.eta
        factor = cholesky_factor(_system(a, c_clip, q_prior))
        return factor.solve(a.T @ b_clip)


def laplace_fit(
    model: LatentModel,
    data: Dataset,
    theta=None,
    init: Optional[np.ndarray] = None,
    tol: float = 1e-8,
    max_iter: int = 100,
) -> GaussianApprox:
    """Newton iterations f <- (A'CA + Q)^{-1} A'b to the conditional mode.

    Steps are halved (up to 20 times) whenever the Newton system is indefinite
    or the joint log-density decreases.

    Raises
    ------
    NonConvergence
        When ``max_iter`` iterations do not reach ``tol``.
    IndefiniteSystem
        When the Hessian at the converged mode is not positive definite.
    """
    theta = model.initial_theta() if theta is None else np.atleast_1d(np.asarray(theta, dtype=float))
    q_prior = model.prior_precision(theta)
    f = np.zeros(model.p) if init is None else np.asarray(init, dtype=float).copy()
    if f.shape != (model.p,):
        raise ValueError(f"init must have length {model.p}, got shape {f.shape}")

    current = log_joint(model, data, theta, f, q_prior)
    converged = False
    iteration = 0
    for iteration in range(1, max_iter + 1):
        site = taylor_site(model, data, theta, f)
        target = _newton_target(model, site, q_prior)
        step = target - f
        scale = 1.0
        accepted = False
        for _ in range(MAX_HALVINGS + 1):
            candidate = f + scale * step
            try:
                value = log_joint(model, data, theta, candidate, q_prior)
            except ValueError:
                value = -np.inf
            if np.isfinite(value) and value >= current - 1e-12 * max(1.0, abs(current)):
                accepted = True
                break
            scale *= 0.5
        if not accepted:
            candidate = f
            value = current
        change = float(np.max(np.abs(candidate - f))) if f.size else 0.0
        f, current = candidate, value
        if change < tol:
            grad = _gradient(model, data, theta, f, q_prior)
            grad_norm = float(np.max(np.abs(grad)))
            if grad_norm <= 10.0 * tol:
                converged = True
                break
            if not accepted:
                raise NonConvergence(
                    f"Newton steps stalled with gradient norm {grad_norm:.3e}.",
                    iterations=iteration,
                )
    if not converged:
        raise NonConvergence(
            f"Laplace iterations did not converge within {max_iter} iterations.",
            iterations=iteration,
        )

    site = taylor_site(model, data, theta, f)
    precision = _system(model.design, site.c_diag, q_prior)
    try:
        factor = cholesky_factor(precision)
    except CholeskyFailure as exc:
        raise IndefiniteSystem(f"Negative Hessian at the mode is not positive definite: {exc}") from exc
    return GaussianApprox(mean=f, precision=precision, factor=factor, theta=theta, iterations=iteration)


def eta_marginal(approx: GaussianApprox, a_row) -> tuple[float, float]:
    """Mean and variance of a' f under the Gaussian approximation."""
    if sparse.issparse(a_row):
        row = sparse.csr_matrix(a_row)
        idx = row.indices
        vals = row.data
    else:
        dense = np.asarray(a_row, dtype=float).ravel()
        idx = np.flatnonzero(dense)
        vals = dense[idx]
    mean = float(vals @ approx.mean[idx]) if idx.size else 0.0
    if idx.size == 0:
        return mean, 0.0
    sel = approx.selected
    if sel.covers(idx):
        block = sel.block(idx)
        return mean, float(vals @ block @ vals)
    full = np.zeros(approx.p)
    full[idx] = vals
    z = approx.factor.solve_lower(full)
    return mean, float(z @ z)


def design_pairs(design: sparse.spmatrix) -> list[tuple[int, int]]:
    """Index pairs (j <= k) that share a design row."""
    design = sparse.csr_matrix(design)
    pairs: set[tuple[int, int]] = set()
    for i in range(design.shape[0]):
        cols = np.sort(design.indices[design.indptr[i] : design.indptr[i + 1]])
        for a_pos, a in enumerate(cols.tolist()):
            for b in cols[a_pos:].tolist():
                pairs.add((a, b))
    return sorted(pairs)


def eta_variances(
    factor: CholeskyFactor,
    design: sparse.spmatrix,
    pairs: Optional[list[tuple[int, int]]] = None,
) -> tuple[np.ndarray, SelectedInverse]:
    """diag(A Q^{-1} A') from a selected inverse extended to the design's row pairs."""
    design = sparse.csr_matrix(design)
    if pairs is None:
        pairs = design_pairs(design)
    sel = selected_inverse(factor=factor, pattern=pairs)
    # entries outside the pattern only meet zero design entries
    variances = np.asarray((design @ sel.matrix).multiply(design).sum(axis=1), dtype=float).ravel()
    return np.clip(variances, 0.0, None), sel


def eta_moments(approx: GaussianApprox, design: sparse.spmatrix) -> tuple[np.ndarray, np.ndarray]:
    """Means and variances of every linear predictor row."""
    design = sparse.csr_matrix(design)
    means = np.asarray(design @ approx.mean, dtype=float).ravel()
    variances, _ = eta_variances(approx.factor, design)
    return means, variances
