"""Variational inference of marginal skewness for an SGC posterior.

For the component ``k`` under optimization the latent field is whitened
with the Cholesky factor of its covariance, ordered so that ``k`` comes
first; skewness is then placed on the first whitened coordinate and each
linear predictor becomes

    eta_i = m_i + c_i * gamma_1 + N(0, v_i - c_i^2),   c_i = (A Sigma)_{ik} / sqrt(Sigma_kk).

Its density is obtained either from the dense whitening and characteristic
functions on an FFT grid, or from a small covariance block around ``k``
followed by a convolution with the conditional Gaussian remainder. The
objective is the expected negative log-likelihood under these densities
plus KLD(SGC || Gaussian).
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from numpy.polynomial.hermite_e import hermeval, hermegauss
from scipy import sparse, stats
from scipy.integrate import trapezoid
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import minimize_scalar
from scipy.signal import fftconvolve

from ..density import DensityGrid
from ..errors import DenseLimitExceeded, GridTooNarrow, LgmError, NonConvergence, OutOfRange
from ..lgm.laplace import GaussianApprox, eta_variances
from ..lgm.model import Dataset, LatentModel
from ..lgm.sparse_linalg import dense_inverse_columns, selected_inverse
from .distribution import SgcDistribution
from .skew_normal import SkewNormalStd, log_skew_map_derivative, skew_map

SKEW_BOUND = 0.95
TAIL_TOL = 1e-6
_FOLD_SPACINGS = 4.0


# ---------------------------------------------------------------------------
# Grids and whitening
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FftGrid:
    """``points`` abscissae spanning +-``half_width`` predictor sds around each predictor mean."""

    points: int = 1024
    half_width: float = 8.0

    def __post_init__(self) -> None:
        if self.points < 16 or self.points & (self.points - 1):
            raise ValueError(f"FFT grid points must be a power of two >= 16, got {self.points}")
        if not self.half_width > 0.0:
            raise ValueError(f"half_width must be positive, got {self.half_width}")

    def spacing(self, sd) -> np.ndarray:
        return 2.0 * self.half_width * np.asarray(sd, dtype=float) / self.points

    def abscissae(self, center, sd) -> np.ndarray:
        """(n, points) abscissae; offset 0 sits at column points // 2."""
        center = np.atleast_1d(np.asarray(center, dtype=float))
        dx = np.atleast_1d(self.spacing(sd))
        offsets = np.arange(self.points) - self.points // 2
        return center[:, None] + dx[:, None] * offsets[None, :]


@dataclass(frozen=True)
class WhitenedModel:
    lower: np.ndarray
    order: np.ndarray
    coefficients: np.ndarray

    @property
    def skew_index(self) -> int:
        return int(self.order[0])


def dense_covariance(approx: GaussianApprox, dense_limit: int = 1000) -> np.ndarray:
    if approx.p > dense_limit:
        raise DenseLimitExceeded(f"p = {approx.p} exceeds the dense limit {dense_limit}; use the blocked path.")
    sigma = dense_inverse_columns(approx.factor, range(approx.p))
    return 0.5 * (sigma + sigma.T)


def whiten(
    approx: GaussianApprox,
    design: sparse.spmatrix,
    order: Optional[Sequence[int]] = None,
    dense_limit: int = 1000,
    covariance: Optional[np.ndarray] = None,
) -> WhitenedModel:
    """gamma = L^{-1} f[order] with L L' = Sigma[order][:, order]; eta = A[:, order] L gamma."""
    sigma = dense_covariance(approx, dense_limit) if covariance is None else covariance
    order = np.arange(approx.p) if order is None else np.asarray(order, dtype=int)
    if sorted(order.tolist()) != list(range(approx.p)):
        raise ValueError("order must be a permutation of the latent indices.")
    lower = np.linalg.cholesky(sigma[np.ix_(order, order)])
    coefficients = np.asarray(sparse.csr_matrix(design)[:, order] @ lower, dtype=float)
    return WhitenedModel(lower=lower, order=order, coefficients=coefficients)


def order_with_first(p: int, first: Sequence[int]) -> np.ndarray:
    head = list(dict.fromkeys(int(k) for k in first))
    return np.asarray(head + [i for i in range(p) if i not in set(head)], dtype=int)


@dataclass(frozen=True)
class BlockSplit:
    """Covariance block around the optimized component (first entry of ``indices``)."""

    indices: tuple[int, ...]
    cov_block: np.ndarray
    lower: np.ndarray
    cross: np.ndarray

    @property
    def size(self) -> int:
        return len(self.indices)


def block_members(precision: sparse.spmatrix, k: int, members: Sequence[int] = (), block_size: int = 30) -> list[int]:
    """k, then the requested members, then k's strongest precision neighbors."""
    q = sparse.csc_matrix(precision)
    diag = np.asarray(q.diagonal(), dtype=float)
    col = q[:, k].tocoo()
    strength = np.abs(col.data) / np.sqrt(diag[col.row] * diag[k])
    neighbors = [int(r) for r in col.row[np.argsort(-strength, kind="stable")] if r != k]
    ordered = list(dict.fromkeys([int(k), *(int(m) for m in members), *neighbors]))
    return ordered[: max(1, int(block_size))]


def build_block_split(
    approx: GaussianApprox,
    design: sparse.spmatrix,
    k: int,
    members: Sequence[int] = (),
    block_size: int = 30,
) -> BlockSplit:
    idx = block_members(approx.precision, k, members, block_size)
    columns = dense_inverse_columns(approx.factor, idx)
    cov_block = columns[idx, :]
    cov_block = 0.5 * (cov_block + cov_block.T)
    lower = np.linalg.cholesky(cov_block)
    cross = np.asarray(sparse.csr_matrix(design) @ columns, dtype=float)
    return BlockSplit(indices=tuple(idx), cov_block=cov_block, lower=lower, cross=cross)


# ---------------------------------------------------------------------------
# Predictor densities
# ---------------------------------------------------------------------------


def _safe_sd(means: np.ndarray, variances: np.ndarray) -> np.ndarray:
    floor = 1e-8 * np.maximum(1.0, np.abs(means))
    return np.maximum(np.sqrt(np.clip(variances, 0.0, None)), floor)


def _sum_density(
    means: np.ndarray,
    sd_total: np.ndarray,
    coefs: np.ndarray,
    skews: Sequence[float],
    gauss_var: np.ndarray,
    grid: FftGrid,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Density of m + sum_j coefs[:, j] gamma_j + N(0, gauss_var) by characteristic functions.

    Returns abscissae, raw density and a mask of rows that carried a skewed summand.
    """
    n = means.size
    npts = grid.points
    x = grid.abscissae(means, sd_total)
    dx = grid.spacing(sd_total)
    coefs = np.asarray(coefs, dtype=float).reshape(n, -1)
    gauss_var = np.array(gauss_var, dtype=float)

    resolved = np.zeros_like(coefs, dtype=bool)
    for j, s in enumerate(skews):
        if s == 0.0:
            gauss_var += coefs[:, j] ** 2
        else:
            ok = np.abs(coefs[:, j]) >= _FOLD_SPACINGS * dx
            resolved[:, j] = ok
            gauss_var += np.where(ok, 0.0, coefs[:, j] ** 2)
    skewed_rows = resolved.any(axis=1)

    dens = np.empty((n, npts))
    plain = ~skewed_rows
    if np.any(plain):
        sd = _safe_sd(means[plain], gauss_var[plain])
        dens[plain] = stats.norm.pdf(x[plain], loc=means[plain, None], scale=sd[:, None])
    if np.any(skewed_rows):
        rows = np.flatnonzero(skewed_rows)
        size = 2 * npts
        offsets = np.fft.fftfreq(size, d=1.0 / size)
        t = dx[rows, None] * offsets[None, :]
        spectrum = np.ones((rows.size, size // 2 + 1), dtype=complex)
        for j, s in enumerate(skews):
            use = resolved[rows, j]
            if s == 0.0 or not np.any(use):
                continue
            law = SkewNormalStd(s)
            c = coefs[rows[use], j]
            base = law.pdf(t[use] / c[:, None]) / np.abs(c)[:, None] * dx[rows[use], None]
            spectrum[use] *= np.fft.rfft(base, axis=1)
        omega = 2.0 * np.pi * np.fft.rfftfreq(size, d=1.0)[None, :] / dx[rows, None]
        spectrum *= np.exp(-0.5 * gauss_var[rows, None] * omega**2)
        wrapped = np.fft.irfft(spectrum, n=size, axis=1) / dx[rows, None]
        centred = np.fft.fftshift(wrapped, axes=1)
        start = npts - npts // 2
        dens[rows] = centred[:, start : start + npts]
    return x, dens, skewed_rows


def _finalize(x: np.ndarray, dens: np.ndarray, sd_total: np.ndarray) -> np.ndarray:
    dens = np.clip(dens, 0.0, None)
    edge = np.maximum(dens[:, 0], dens[:, -1]) * sd_total
    if np.any(edge > TAIL_TOL):
        worst = int(np.argmax(edge))
        raise GridTooNarrow(
            f"Predictor {worst} keeps density {edge[worst]:.2e} (sd units) at the grid edge; widen the grid."
        )
    mass = trapezoid(dens, x, axis=1)
    if np.any(~(mass > 0.0)):
        raise GridTooNarrow("A predictor density has no mass on its grid.")
    return dens / mass[:, None]


def _as_grids(x: np.ndarray, dens: np.ndarray) -> list[DensityGrid]:
    return [DensityGrid(x[i], dens[i]) for i in range(x.shape[0])]


def _fft_arrays(whitened: WhitenedModel, skew_assignment, eta_mean, grid: FftGrid):
    skews = np.zeros(whitened.coefficients.shape[1])
    for j, s in dict(skew_assignment).items():
        skews[int(j)] = float(s)
    skewed = np.flatnonzero(skews)
    coefs = whitened.coefficients
    total_var = np.sum(coefs * coefs, axis=1)
    gauss_idx = np.setdiff1d(np.arange(coefs.shape[1]), skewed)
    gauss_var = np.sum(coefs[:, gauss_idx] ** 2, axis=1)
    means = np.asarray(eta_mean, dtype=float)
    sd = _safe_sd(means, total_var)
    x, dens, _ = _sum_density(means, sd, coefs[:, skewed], skews[skewed].tolist(), gauss_var, grid)
    return x, _finalize(x, dens, sd)


def eta_density_fft(whitened: WhitenedModel, skew_assignment, eta_mean, grid: Optional[FftGrid] = None) -> list[DensityGrid]:
    """Predictor densities with skew-normal whitened coordinates given by ``skew_assignment``.

    ``skew_assignment`` maps whitened positions to skewness; all other
    whitened coordinates are standard normal.
    """
    grid = grid or FftGrid()
    return _as_grids(*_fft_arrays(whitened, skew_assignment, eta_mean, grid))


def _blocked_arrays(split: BlockSplit, skewness: float, eta_mean, eta_var, grid: FftGrid):
    means = np.asarray(eta_mean, dtype=float)
    total_var = np.asarray(eta_var, dtype=float)
    coef = split.cross[:, 0] / np.sqrt(split.cov_block[0, 0])
    factor = cho_factor(split.cov_block, lower=True)
    block_var = np.einsum("ij,ji->i", split.cross, cho_solve(factor, split.cross.T))
    block_gauss = np.clip(block_var - coef**2, 0.0, None)
    residual = np.clip(total_var - block_var, 0.0, None)
    sd = _safe_sd(means, total_var)

    x, dens, skewed_rows = _sum_density(means, sd, coef[:, None], [skewness], block_gauss, grid)
    plain = ~skewed_rows
    if np.any(plain):
        dens[plain] = stats.norm.pdf(x[plain], loc=means[plain, None], scale=sd[plain, None])
    if np.any(skewed_rows):
        rows = np.flatnonzero(skewed_rows)
        dx = grid.spacing(sd[rows])
        taps = np.arange(-(grid.points - 1), grid.points)
        r_sd = np.sqrt(residual[rows])
        with np.errstate(divide="ignore", invalid="ignore"):
            kernel = np.where(
                r_sd[:, None] > 0.0,
                stats.norm.pdf(taps[None, :] * dx[:, None], scale=np.where(r_sd > 0.0, r_sd, 1.0)[:, None]),
                (taps[None, :] == 0).astype(float),
            )
        kernel_mass = kernel.sum(axis=1)
        kernel = np.where(kernel_mass[:, None] > 0.0, kernel / kernel_mass[:, None], (taps[None, :] == 0))
        dens[rows] = fftconvolve(dens[rows], kernel, mode="same", axes=1)
    return x, _finalize(x, dens, sd)


def eta_density_blocked(
    split: BlockSplit,
    skewness: float,
    eta_mean,
    eta_var,
    grid: Optional[FftGrid] = None,
) -> list[DensityGrid]:
    """Predictor densities from the block around ``split.indices[0]``.

    The block part (skewed coordinate plus the Gaussian remainder explained
    by the block) comes from the FFT; the conditional Gaussian remainder of
    the rest of the field is convolved on the same grid.
    """
    grid = grid or FftGrid()
    return _as_grids(*_blocked_arrays(split, skewness, eta_mean, eta_var, grid))


def _expected_nll_arrays(model: LatentModel, theta, y: np.ndarray, x: np.ndarray, dens: np.ndarray) -> float:
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        ll, _, _ = model.likelihood.loglik(theta, y[:, None], x)
    ok = np.isfinite(ll)
    if not np.all(ok):
        # truncate to the likelihood's support
        dens = np.where(ok, dens, 0.0)
        mass = trapezoid(dens, x, axis=1)
        dens = dens / np.where(mass > 0.0, mass, 1.0)[:, None]
        ll = np.where(ok, ll, 0.0)
    return float(np.sum(trapezoid(-ll * dens, x, axis=1)))


def expected_nll_sgc(model: LatentModel, data: Dataset, theta, densities: Sequence[DensityGrid]) -> float:
    """Sum over observations of E[-log p(y_i | eta_i)] under the given predictor densities."""
    if len(densities) != data.n:
        raise ValueError(f"Expected {data.n} predictor densities, got {len(densities)}")
    npts = {d.x.size for d in densities}
    if len(npts) == 1:
        x = np.vstack([d.x for d in densities])
        dens = np.vstack([d.density for d in densities])
        return _expected_nll_arrays(model, theta, data.y, x, dens)
    return float(
        sum(
            _expected_nll_arrays(model, theta, data.y[i : i + 1], d.x[None, :], d.density[None, :])
            for i, d in enumerate(densities)
        )
    )


# ---------------------------------------------------------------------------
# KLD(SGC || Gaussian)
# ---------------------------------------------------------------------------


def gaussian_even_moments(cov: tuple[float, float, float], j: int, k: int) -> float:
    """E[X^j Y^k] for a centred bivariate Gaussian with (var X, var Y, cov XY) = ``cov``, j, k <= 3."""
    if not (0 <= j <= 3 and 0 <= k <= 3):
        raise ValueError(f"Powers must lie in 0..3, got ({j}, {k})")
    a, b, c = (float(v) for v in cov)
    if (j + k) % 2:
        return 0.0
    table = {
        (0, 0): 1.0,
        (1, 1): c,
        (2, 0): a,
        (0, 2): b,
        (3, 1): 3.0 * a * c,
        (1, 3): 3.0 * b * c,
        (2, 2): a * b + 2.0 * c * c,
        (3, 3): 9.0 * a * b * c + 6.0 * c**3,
    }
    return table[(j, k)]


def _normal_nodes(count: int) -> tuple[np.ndarray, np.ndarray]:
    nodes, weights = hermegauss(count)
    weights = weights / np.sqrt(2.0 * np.pi)
    keep = weights > 1e-18
    return nodes[keep], weights[keep] / weights[keep].sum()


@lru_cache(maxsize=4096)
def neg_log_jacobian(s: float, nodes: int = 201) -> float:
    """-E[log g'(Z)] for standard-normal Z; the univariate KLD(SN || N)."""
    if s == 0.0:
        return 0.0
    z, w = _normal_nodes(nodes)
    return float(-(w @ log_skew_map_derivative(z, s)))


def _hermite_coefficients(s: float, nodes: int = 101) -> np.ndarray:
    """Power-series coefficients c0..c3 of the degree-3 Hermite least-squares fit of g."""
    z, w = _normal_nodes(nodes)
    g, _ = skew_map(z, s)
    proj = np.array([w @ (g * hermeval(z, np.eye(4)[k])) for k in range(4)])
    b = proj / np.array([1.0, 1.0, 2.0, 6.0])
    return np.array([b[0] - b[2], b[1] - 3.0 * b[3], b[2], b[3]])


@dataclass(frozen=True)
class MomentCoeffTable:
    """Degree-3 power-series coefficients of g on a skewness grid, linearly interpolated."""

    skewness: np.ndarray
    coefficients: np.ndarray
    first_moment: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, step: float = 0.01, limit: float = SKEW_BOUND) -> "MomentCoeffTable":
        return _cached_table(round(float(step), 10), round(float(limit), 10))

    def _check(self, s: float) -> None:
        if abs(s) > self.skewness[-1] + 1e-12:
            raise OutOfRange(f"Skewness {s} outside the coefficient table range +-{self.skewness[-1]:.2f}")

    def coefficients_at(self, s: float) -> np.ndarray:
        self._check(s)
        return np.array([np.interp(s, self.skewness, self.coefficients[:, j]) for j in range(4)])

    def linear_moment(self, s: float) -> float:
        """E[Z g(Z)], the correlation factor between g(Z) and Z."""
        self._check(s)
        return float(np.interp(s, self.skewness, self.first_moment))

    def cross_moment(self, s_i: float, s_j: float, r: float) -> float:
        """E[g_i(Z_i) g_j(Z_j)] for standard normals with correlation ``r``."""
        ci = self.coefficients_at(s_i) if s_i != 0.0 else np.array([0.0, 1.0, 0.0, 0.0])
        cj = self.coefficients_at(s_j) if s_j != 0.0 else np.array([0.0, 1.0, 0.0, 0.0])
        return float(
            sum(ci[a] * cj[b] * gaussian_even_moments((1.0, 1.0, r), a, b) for a in range(4) for b in range(4))
        )


@lru_cache(maxsize=8)
def _cached_table(step: float, limit: float) -> MomentCoeffTable:
    count = int(round(limit / step))
    grid = np.round(np.arange(-count, count + 1) * step, 10)
    coefficients = np.array([_hermite_coefficients(float(s)) if s != 0.0 else [0.0, 1.0, 0.0, 0.0] for s in grid])
    z, w = _normal_nodes(101)
    first = np.array([float(w @ (z * skew_map(z, float(s))[0])) if s != 0.0 else 1.0 for s in grid])
    return MomentCoeffTable(skewness=grid, coefficients=coefficients, first_moment=first)


def single_component_kld(s: float, precision_factor: float, table: Optional[MomentCoeffTable] = None) -> float:
    """KLD when only one component is skewed; ``precision_factor`` is Sigma_kk * Q_kk."""
    if s == 0.0:
        return 0.0
    table = table or MomentCoeffTable.build()
    return neg_log_jacobian(float(s)) + (1.0 - precision_factor) * (table.linear_moment(s) - 1.0)


def kld_sgc_gaussian(dist: SgcDistribution, table: Optional[MomentCoeffTable] = None) -> float:
    """KLD(SGC || N(mu, Q^{-1})) = -sum E[log g'] + pairwise terms over the precision pattern."""
    table = table or MomentCoeffTable.build()
    skewed = dist.skewed_indices()
    if skewed.size == 0:
        return 0.0
    for k in skewed:
        table._check(float(dist.skewness[k]))
    sel = selected_inverse(factor=dist.factor)
    sd = np.sqrt(sel.diagonal())
    i1 = float(sum(neg_log_jacobian(float(dist.skewness[k])) for k in skewed))

    upper = sparse.triu(dist.precision, k=1).tocoo()
    is_skewed = dist.skewness != 0.0
    i2 = 0.0
    for i, j, q in zip(upper.row, upper.col, upper.data):
        if not (is_skewed[i] or is_skewed[j]) or q == 0.0:
            continue
        r = sel.get(int(i), int(j)) / (sd[i] * sd[j])
        if is_skewed[i] and is_skewed[j]:
            moment = table.cross_moment(float(dist.skewness[i]), float(dist.skewness[j]), r)
        else:
            s = float(dist.skewness[i] if is_skewed[i] else dist.skewness[j])
            moment = r * table.linear_moment(s)
        i2 += q * sd[i] * sd[j] * (moment - r)
    return i1 + i2


# ---------------------------------------------------------------------------
# Skewness optimization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ComponentFit:
    index: int
    skewness: float
    objective: float
    objective_at_zero: float
    path: str
    warning: Optional[str] = None


@dataclass(frozen=True)
class SkewnessFit:
    skewness: np.ndarray
    components: tuple[ComponentFit, ...]
    warnings: tuple[str, ...] = ()


def _resolve_path(path: str, p: int, dense_limit: int) -> str:
    if path not in ("auto", "fft", "blocked"):
        raise ValueError(f"Unknown density path: {path!r}")
    if path == "auto":
        return "fft" if p <= dense_limit else "blocked"
    return path


def _component_objective(
    model: LatentModel,
    data: Dataset,
    theta,
    corrected: GaussianApprox,
    k: int,
    *,
    eta_mean: np.ndarray,
    eta_var: np.ndarray,
    path: str,
    grid: FftGrid,
    table: MomentCoeffTable,
    covariance: Optional[np.ndarray],
    members: Sequence[int],
    block_size: int,
):
    q_kk = float(corrected.precision[k, k])
    if path == "fft":
        whitened = whiten(corrected, model.design, order_with_first(corrected.p, [k]), covariance=covariance)
        sigma_kk = float(whitened.lower[0, 0] ** 2)

        def densities(s):
            return _fft_arrays(whitened, {0: s}, eta_mean, grid)

    else:
        split = build_block_split(corrected, model.design, k, members, block_size)
        sigma_kk = float(split.cov_block[0, 0])

        def densities(s):
            return _blocked_arrays(split, s, eta_mean, eta_var, grid)

    factor = sigma_kk * q_kk

    def objective(s: float) -> float:
        x, dens = densities(float(s))
        return _expected_nll_arrays(model, theta, data.y, x, dens) + single_component_kld(float(s), factor, table)

    return objective


def _optimize_component(k: int, objective, path: str, xatol: float, max_iter: int) -> ComponentFit:
    try:
        at_zero = objective(0.0)
        result = minimize_scalar(
            objective,
            bounds=(-SKEW_BOUND, SKEW_BOUND),
            method="bounded",
            options={"xatol": xatol, "maxiter": max_iter},
        )
        if not result.success:
            raise NonConvergence(f"Skewness search for component {k} stopped: {result.message}")
    except (LgmError, ValueError, FloatingPointError) as exc:
        message = f"component {k}: skewness fixed at 0 ({type(exc).__name__}: {exc})"
        return ComponentFit(k, 0.0, float("nan"), float("nan"), path, message)
    s_hat = float(result.x)
    value = float(result.fun)
    if not value <= at_zero:
        s_hat, value = 0.0, at_zero
    return ComponentFit(k, s_hat, value, float(at_zero), path)


def optimize_skewness(
    model: LatentModel,
    data: Dataset,
    theta,
    corrected: GaussianApprox,
    components: Optional[Sequence[int]] = None,
    *,
    grid: Optional[FftGrid] = None,
    path: str = "auto",
    dense_limit: int = 1000,
    block_size: int = 30,
    n_jobs: int = 1,
    xatol: float = 1e-4,
    max_iter: int = 100,
) -> SkewnessFit:
    """Per-component skewness by bounded scalar minimization on [-0.95, 0.95].

    Each component is optimized with the others held Gaussian; components
    whose search fails keep skewness 0 and the failure is reported.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    components = model.fixed_effect_indices() if components is None else [int(k) for k in components]
    skew = np.zeros(corrected.p)
    if not components:
        return SkewnessFit(skewness=skew, components=())
    grid = grid or FftGrid()
    chosen = _resolve_path(path, corrected.p, dense_limit)
    table = MomentCoeffTable.build()
    eta_mean = np.asarray(model.design @ corrected.mean, dtype=float).ravel()
    eta_var, _ = eta_variances(corrected.factor, model.design)
    covariance = dense_covariance(corrected, dense_limit) if chosen == "fft" else None

    def run(k: int) -> ComponentFit:
        objective = _component_objective(
            model,
            data,
            theta,
            corrected,
            k,
            eta_mean=eta_mean,
            eta_var=eta_var,
            path=chosen,
            grid=grid,
            table=table,
            covariance=covariance,
            members=components,
            block_size=block_size,
        )
        return _optimize_component(k, objective, chosen, xatol, max_iter)

    if n_jobs > 1 and len(components) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            fits = list(pool.map(run, components))
    else:
        fits = [run(k) for k in components]

    notes = []
    for fit in fits:
        skew[fit.index] = fit.skewness
        if fit.warning:
            notes.append(fit.warning)
            warnings.warn(fit.warning, RuntimeWarning, stacklevel=2)
    return SkewnessFit(skewness=skew, components=tuple(fits), warnings=tuple(notes))


def fit_sgc(
    model: LatentModel,
    data: Dataset,
    theta,
    corrected: GaussianApprox,
    components: Optional[Sequence[int]] = None,
    **options,
) -> SgcDistribution:
    """SGC posterior: the corrected Gaussian core with optimized marginal skewness."""
    if components is not None and len(components) == 0:
        return SgcDistribution.from_gaussian(corrected)
    fit = optimize_skewness(model, data, theta, corrected, components, **options)
    return SgcDistribution.from_gaussian(corrected, fit.skewness)


def eta_density_table(
    model: LatentModel,
    corrected: GaussianApprox,
    skewness: np.ndarray,
    grid: Optional[FftGrid] = None,
    dense_limit: int = 1000,
) -> pd.DataFrame:
    """Per-observation predictor densities (observation, abscissa, density) under fitted skewness."""
    grid = grid or FftGrid()
    skewness = np.asarray(skewness, dtype=float)
    eta_mean = np.asarray(model.design @ corrected.mean, dtype=float).ravel()
    skewed = np.flatnonzero(skewness)
    if corrected.p <= dense_limit:
        whitened = whiten(corrected, model.design, order_with_first(corrected.p, skewed), dense_limit)
        x, dens = _fft_arrays(whitened, {j: skewness[k] for j, k in enumerate(skewed)}, eta_mean, grid)
    else:
        eta_var, _ = eta_variances(corrected.factor, model.design)
        k = int(skewed[np.argmax(np.abs(skewness[skewed]))]) if skewed.size else 0
        split = build_block_split(corrected, model.design, k, skewed)
        x, dens = _blocked_arrays(split, float(skewness[k]), eta_mean, eta_var, grid)
    n, npts = x.shape
    return pd.DataFrame(
        {
            "observation": np.repeat(np.arange(n), npts),
            "abscissa": x.ravel(),
            "density": dens.ravel(),
        }
    )
