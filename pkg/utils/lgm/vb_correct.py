"""Low-rank variational corrections of the Laplace mean (VB-M) and marginal variances (VB-M+V).

Both corrections minimize

    sum_i E[-log p(y_i | eta_i)] + KLD(N(mu, Q^{-1}) || N(0, Q_theta^{-1}))

over a perturbation ``delta`` supported on a small index set: added to the
right-hand side of Q_f mu = A'b for the mean, and to the diagonal of Q_f for
the variances. Expectations over each eta_i use Gauss-Hermite quadrature.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy import sparse
from scipy.optimize import minimize

from ..errors import CholeskyFailure, NonConvergence
from .laplace import GaussianApprox, TaylorSite, design_pairs, eta_variances
from .likelihoods import loglik_eval
from .model import Dataset, LatentModel
from .sparse_linalg import CholeskyFactor, cholesky_factor, dense_inverse_columns


@dataclass(frozen=True)
class CorrectionIndexSet:
    indices: tuple[int, ...]

    def __post_init__(self) -> None:
        idx = tuple(int(i) for i in self.indices)
        if not idx:
            raise ValueError("Correction index set must not be empty.")
        if len(set(idx)) != len(idx):
            raise ValueError(f"Correction index set has duplicates: {idx}")
        if min(idx) < 0:
            raise ValueError(f"Correction indices must be >= 0: {idx}")
        object.__setattr__(self, "indices", idx)

    def __len__(self) -> int:
        return len(self.indices)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.indices, dtype=int)


@dataclass(frozen=True)
class MeanCorrection:
    delta: np.ndarray
    corrected_mean: np.ndarray
    indices: CorrectionIndexSet
    objective: float
    objective_at_zero: float
    iterations: int
    trace: tuple[dict, ...] = field(default_factory=tuple, repr=False)


@dataclass(frozen=True)
class VarCorrection:
    delta: np.ndarray
    corrected_precision: sparse.csc_matrix
    approx: GaussianApprox
    indices: CorrectionIndexSet
    objective: float
    objective_at_zero: float
    iterations: int
    trace: tuple[dict, ...] = field(default_factory=tuple, repr=False)


@dataclass(frozen=True)
class CorrectionProblem:
    """Immutable inputs shared by both corrections at one hyperparameter value."""

    model: LatentModel
    data: Dataset
    approx: GaussianApprox
    site: TaylorSite
    indices: CorrectionIndexSet
    nodes: np.ndarray
    weights: np.ndarray
    q_prior: sparse.csc_matrix
    log_det_prior: float
    pairs: tuple[tuple[int, int], ...]

    @classmethod
    def build(
        cls,
        model: LatentModel,
        data: Dataset,
        approx: GaussianApprox,
        site: TaylorSite,
        indices: Optional[Sequence[int]] = None,
        gh_nodes: int = 15,
    ) -> "CorrectionProblem":
        if indices is None:
            indices = model.default_correction_indices()
        index_set = indices if isinstance(indices, CorrectionIndexSet) else CorrectionIndexSet(tuple(indices))
        if max(index_set.indices) >= model.p:
            raise ValueError(f"Correction index out of range for p = {model.p}: {index_set.indices}")
        # support check once; quadrature then calls the family directly
        loglik_eval(model.likelihood, approx.theta, data.y, site.eta)
        nodes, weights = hermgauss(int(gh_nodes))
        q_prior = model.prior_precision(approx.theta)
        return cls(
            model=model,
            data=data,
            approx=approx,
            site=site,
            indices=index_set,
            nodes=nodes,
            weights=weights / np.sqrt(np.pi),
            q_prior=q_prior,
            log_det_prior=cholesky_factor(q_prior).log_det,
            pairs=tuple(design_pairs(model.design)),
        )

    @property
    def p(self) -> int:
        return self.model.p

    def delta_on_set(self, delta) -> np.ndarray:
        delta = np.asarray(delta, dtype=float).ravel()
        idx = self.indices.as_array()
        if delta.size == idx.size:
            return delta
        if delta.size == self.p:
            off = np.ones(self.p, dtype=bool)
            off[idx] = False
            if np.any(delta[off] != 0.0):
                raise ValueError("delta has nonzero entries outside the correction index set.")
            return delta[idx]
        raise ValueError(f"delta must have length {idx.size} or {self.p}, got {delta.size}")

    def scatter(self, values: np.ndarray) -> np.ndarray:
        full = np.zeros(self.p)
        full[self.indices.as_array()] = values
        return full


def gh_expectations(problem: CorrectionProblem, means: np.ndarray, variances: np.ndarray):
    """E[-log L_i], and its derivatives in the eta mean and variance, per observation."""
    x = problem.nodes
    w = problem.weights
    sd2 = np.sqrt(2.0 * np.clip(variances, 0.0, None))
    eta = means[:, None] + sd2[:, None] * x[None, :]
    y = problem.data.y[:, None]
    ll, d1, d2 = problem.model.likelihood.loglik(problem.approx.theta, y, eta)
    value = -(ll @ w)
    d_mean = -(d1 @ w)
    with np.errstate(divide="ignore", invalid="ignore"):
        d_var = np.where(sd2 > 0.0, -((d1 * x[None, :]) @ w) / np.where(sd2 > 0.0, sd2, 1.0), -0.5 * (d2 @ w))
    return value, d_mean, d_var


def _kld_constant(problem: CorrectionProblem, trace_term: float, log_det: float, mean: np.ndarray) -> float:
    quad = float(mean @ (problem.q_prior @ mean))
    return 0.5 * (trace_term + quad - problem.p + log_det - problem.log_det_prior)


def _trace_prior_cov(problem: CorrectionProblem, sel_matrix: sparse.spmatrix) -> float:
    return float(sel_matrix.multiply(problem.q_prior).sum())


def solve_corrected_mean(approx: GaussianApprox, site: TaylorSite, delta) -> np.ndarray:
    """mu_corr with Q_f mu_corr = A'b + delta, reusing the cached factor of Q_f."""
    delta = np.asarray(delta, dtype=float).ravel()
    if delta.size != approx.p:
        raise ValueError(f"delta must have length {approx.p}, got {delta.size}")
    return approx.factor.solve(site.rhs + delta)


# ---------------------------------------------------------------------------
# Mean correction
# ---------------------------------------------------------------------------


class _MeanState:
    """Quantities of the uncorrected Gaussian that the mean objective reuses."""

    def __init__(self, problem: CorrectionProblem):
        self.design = problem.model.design
        self.variances, sel = eta_variances(problem.approx.factor, self.design, list(problem.pairs))
        self.const = 0.5 * (
            _trace_prior_cov(problem, sel.matrix) - problem.p + problem.approx.log_det - problem.log_det_prior
        )


def vb_mean_objective(problem: CorrectionProblem, delta, with_grad: bool = False, state=None):
    """Variational objective of N(mu_corr(delta), Q_f), all constants included."""
    state = state or _MeanState(problem)
    values = problem.delta_on_set(delta)
    mean = solve_corrected_mean(problem.approx, problem.site, problem.scatter(values))
    eta_mean = np.asarray(state.design @ mean, dtype=float).ravel()
    nll, d_mean, _ = gh_expectations(problem, eta_mean, state.variances)
    value = float(np.sum(nll) + 0.5 * mean @ (problem.q_prior @ mean) + state.const)
    if not with_grad:
        return value
    r = state.design.T @ d_mean + problem.q_prior @ mean
    grad = problem.approx.factor.solve(r)[problem.indices.as_array()]
    return value, grad


def vb_mean_correct(problem: CorrectionProblem, max_iter: int = 200, gtol: float = 1e-6) -> MeanCorrection:
    state = _MeanState(problem)
    k = len(problem.indices)
    trace: list[dict] = []

    def fun(values):
        return vb_mean_objective(problem, values, with_grad=True, state=state)

    def callback(xk):
        value, grad = fun(xk)
        trace.append(_trace_row("mean", len(trace) + 1, value, grad, xk))

    zero_value, zero_grad = fun(np.zeros(k))
    trace.append(_trace_row("mean", 0, zero_value, zero_grad, np.zeros(k)))
    result = minimize(
        fun,
        np.zeros(k),
        jac=True,
        method="BFGS",
        callback=callback,
        options={"gtol": gtol, "maxiter": max_iter},
    )
    if result.status == 1:
        raise NonConvergence(
            f"VB mean correction did not converge within {max_iter} iterations.",
            iterations=int(result.nit),
        )
    values = np.asarray(result.x, dtype=float)
    objective = float(result.fun)
    if not objective <= zero_value:
        values = np.zeros(k)
        objective = zero_value
    delta = problem.scatter(values)
    return MeanCorrection(
        delta=delta,
        corrected_mean=solve_corrected_mean(problem.approx, problem.site, delta),
        indices=problem.indices,
        objective=objective,
        objective_at_zero=zero_value,
        iterations=int(result.nit),
        trace=tuple(trace),
    )


# ---------------------------------------------------------------------------
# Variance correction
# ---------------------------------------------------------------------------


def _perturbed_precision(problem: CorrectionProblem, values: np.ndarray) -> sparse.csc_matrix:
    return (problem.approx.precision + sparse.diags(problem.scatter(values))).tocsc()


def vb_var_objective(
    problem: CorrectionProblem,
    delta,
    mean: Optional[np.ndarray] = None,
    with_grad: bool = False,
):
    """Variational objective of N(mean, (Q_f + diag delta)^{-1}).

    Raises ``CholeskyFailure`` when Q_f + diag(delta) is not positive definite.
    """
    values = problem.delta_on_set(delta)
    mean = problem.approx.mean if mean is None else np.asarray(mean, dtype=float)
    precision = _perturbed_precision(problem, values)
    factor = cholesky_factor(precision)
    design = problem.model.design
    variances, sel = eta_variances(factor, design, list(problem.pairs))
    eta_mean = np.asarray(design @ mean, dtype=float).ravel()
    nll, _, d_var = gh_expectations(problem, eta_mean, variances)
    trace_term = _trace_prior_cov(problem, sel.matrix)
    value = float(np.sum(nll) + _kld_constant(problem, trace_term, factor.log_det, mean))
    if not with_grad:
        return value
    return value, _var_gradient(problem, factor, d_var, sel)


def _var_gradient(problem: CorrectionProblem, factor: CholeskyFactor, d_var: np.ndarray, sel) -> np.ndarray:
    idx = problem.indices.as_array()
    cols = dense_inverse_columns(factor, idx)
    design = problem.model.design
    a_cols = np.asarray(design @ cols, dtype=float)
    grad_nll = -(d_var @ (a_cols * a_cols))
    grad_trace = -0.5 * np.einsum("ij,ij->j", cols, np.asarray(problem.q_prior @ cols))
    grad_logdet = 0.5 * cols[idx, np.arange(idx.size)]
    return grad_nll + grad_trace + grad_logdet


def _trace_row(kind: str, iteration: int, value: float, grad: np.ndarray, values: np.ndarray) -> dict:
    return {
        "kind": kind,
        "iteration": int(iteration),
        "objective": float(value),
        "grad_norm": float(np.max(np.abs(grad))) if np.size(grad) else 0.0,
        "delta": [float(v) for v in np.atleast_1d(values)],
    }


#: Lower bound on delta_c / Q_f[c, c]; keeps every corrected diagonal entry positive.
MIN_RELATIVE_SHIFT = -0.999

#: Scale of the barrier scored at trial points where Q_f + diag(delta) is indefinite.
INFEASIBLE_PENALTY = 1e3


def vb_var_correct(
    problem: CorrectionProblem,
    mean_correction: Optional[MeanCorrection] = None,
    max_iter: int = 200,
    gtol: float = 1e-7,
) -> VarCorrection:
    """Minimize the variance objective over the diagonal perturbation.

    L-BFGS-B works in relative units delta_c / Q_f[c, c] bounded below by
    ``MIN_RELATIVE_SHIFT``. Trial points where Q_f + diag(delta) still loses
    positive definiteness score a quadratic barrier above the value at
    delta = 0, so the line search shortens the step and an indefinite end
    point falls back to delta = 0.
    """
    mean = problem.approx.mean if mean_correction is None else mean_correction.corrected_mean
    idx = problem.indices.as_array()
    scale = np.asarray(problem.approx.precision.diagonal(), dtype=float)[idx]
    trace: list[dict] = []
    zero_value, zero_grad = vb_var_objective(problem, np.zeros(idx.size), mean=mean, with_grad=True)
    barrier = INFEASIBLE_PENALTY * (1.0 + abs(zero_value))
    failures: list[CholeskyFailure] = []

    def fun(u):
        try:
            value, grad = vb_var_objective(problem, u * scale, mean=mean, with_grad=True)
        except CholeskyFailure as exc:
            failures.append(exc)
            return zero_value + barrier * (1.0 + float(u @ u)), 2.0 * barrier * u
        return value, grad * scale

    def callback(uk):
        value, grad = vb_var_objective(problem, uk * scale, mean=mean, with_grad=True)
        trace.append(_trace_row("var", len(trace), value, grad, uk * scale))

    trace.append(_trace_row("var", 0, zero_value, zero_grad, np.zeros(idx.size)))
    result = minimize(
        fun,
        np.zeros(idx.size),
        jac=True,
        method="L-BFGS-B",
        bounds=[(MIN_RELATIVE_SHIFT, None)] * idx.size,
        callback=callback,
        options={"gtol": gtol, "ftol": 1e-12, "maxiter": max_iter},
    )
    if result.status == 1:
        raise NonConvergence(
            f"Variance correction did not converge within {max_iter} iterations.",
            iterations=int(result.nit),
        )
    stuck = not float(result.fun) < zero_value and float(np.max(np.abs(zero_grad * scale))) > gtol
    if stuck and failures:
        last = failures[-1]
        raise NonConvergence(
            f"Variance correction stayed indefinite near index {last.index}: {last}",
            iterations=int(result.nit),
        )
    values = np.asarray(result.x, dtype=float) * scale
    objective = float(result.fun)
    iterations = int(result.nit)
    if not objective <= zero_value:
        values = np.zeros(idx.size)
        objective = zero_value
    precision = _perturbed_precision(problem, values)
    corrected = GaussianApprox(
        mean=np.asarray(mean, dtype=float),
        precision=precision,
        factor=cholesky_factor(precision),
        theta=problem.approx.theta,
        iterations=problem.approx.iterations,
    )
    return VarCorrection(
        delta=problem.scatter(values),
        corrected_precision=precision,
        approx=corrected,
        indices=problem.indices,
        objective=float(objective),
        objective_at_zero=float(zero_value),
        iterations=iterations,
        trace=tuple(trace),
    )
