"""The skewed Gaussian with Gaussian copula (SGC) distribution."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np
import pandas as pd
from scipy import sparse, stats

from ..density import DensityGrid, equispaced
from ..errors import OutOfRange
from ..lgm.laplace import GaussianApprox
from ..lgm.sparse_linalg import CholeskyFactor, cholesky_factor, dense_inverse_columns, selected_inverse
from .skew_normal import SKEWNESS_MAX, SkewNormalStd, skew_map, skew_map_inverse_log_jacobian

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class SgcDistribution:
    """Gaussian copula of N(mean, precision^{-1}) with skew-normal marginals.

    Components with zero skewness keep their Gaussian marginal; every
    marginal keeps the mean and variance of the Gaussian core.
    """

    mean: np.ndarray
    precision: sparse.csc_matrix
    factor: CholeskyFactor
    skewness: np.ndarray

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=float).ravel()
        skew = np.asarray(self.skewness, dtype=float).ravel()
        if skew.shape != mean.shape:
            raise ValueError(f"skewness has shape {skew.shape}, expected {mean.shape}")
        if np.any(np.abs(skew) >= SKEWNESS_MAX):
            raise OutOfRange(f"Skewness entries must lie inside (-{SKEWNESS_MAX:.5f}, {SKEWNESS_MAX:.5f}).")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "skewness", skew)

    @classmethod
    def from_gaussian(cls, approx: GaussianApprox, skewness=None) -> "SgcDistribution":
        skew = np.zeros(approx.p) if skewness is None else skewness
        out = cls(mean=approx.mean, precision=approx.precision, factor=approx.factor, skewness=skew)
        if "selected" in approx.__dict__:
            out.__dict__["marginal_sd"] = np.sqrt(approx.marginal_variances())
        return out

    @classmethod
    def from_covariance(cls, mean, covariance, skewness) -> "SgcDistribution":
        precision = sparse.csc_matrix(np.linalg.inv(np.asarray(covariance, dtype=float)))
        return cls(mean=mean, precision=precision, factor=cholesky_factor(precision), skewness=skewness)

    @property
    def p(self) -> int:
        return int(self.mean.size)

    @cached_property
    def marginal_sd(self) -> np.ndarray:
        return np.sqrt(selected_inverse(factor=self.factor).diagonal())

    def skewed_indices(self) -> np.ndarray:
        return np.flatnonzero(self.skewness != 0.0)

    def with_skewness(self, skewness) -> "SgcDistribution":
        out = SgcDistribution(self.mean, self.precision, self.factor, skewness)
        if "marginal_sd" in self.__dict__:
            out.__dict__["marginal_sd"] = self.marginal_sd
        return out


def gaussian_logpdf(mean: np.ndarray, precision: sparse.spmatrix, log_det: float, x: np.ndarray) -> np.ndarray:
    """Multivariate Gaussian log-density for the rows of ``x``."""
    r = np.atleast_2d(x) - mean
    quad = np.einsum("ij,ij->i", r, np.asarray((precision @ r.T).T))
    return 0.5 * log_det - 0.5 * mean.size * LOG_2PI - 0.5 * quad


def sgc_logpdf(dist: SgcDistribution, x) -> np.ndarray | float:
    """Log-density at one point (vector) or many points (rows)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    points = np.atleast_2d(x)
    if points.shape[1] != dist.p:
        raise ValueError(f"Points must have {dist.p} columns, got {points.shape[1]}")
    sd = dist.marginal_sd
    f = points.copy()
    log_jac = np.zeros(points.shape[0])
    underflow = np.zeros(points.shape[0], dtype=bool)
    for k in dist.skewed_indices():
        u = (points[:, k] - dist.mean[k]) / sd[k]
        z, log_dz = skew_map_inverse_log_jacobian(u, dist.skewness[k])
        lost = ~np.isfinite(z)
        underflow |= lost
        f[:, k] = dist.mean[k] + sd[k] * np.where(lost, 0.0, z)
        log_jac += np.where(lost, 0.0, log_dz)
    out = gaussian_logpdf(dist.mean, dist.precision, dist.factor.log_det, f) + log_jac
    out[underflow] = -np.inf
    return float(out[0]) if single else out


def sgc_sample(dist: SgcDistribution, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` draws as rows; the copula comes from N(mean, Q^{-1})."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    z = rng.standard_normal((dist.p, int(count)))
    draws = (dist.factor.sample_transform(z) + dist.mean[:, None]).T
    sd = dist.marginal_sd
    for k in dist.skewed_indices():
        u = (draws[:, k] - dist.mean[k]) / sd[k]
        g, _ = skew_map(u, dist.skewness[k])
        draws[:, k] = dist.mean[k] + sd[k] * g
    return draws


def marginal_law(mean: float, sd: float, skewness: float):
    """Frozen scipy law with the given mean, sd and standardized skewness."""
    if skewness == 0.0:
        return stats.norm(loc=mean, scale=sd)
    std = SkewNormalStd(skewness)
    return stats.skewnorm(std.shape, loc=mean + sd * std.location, scale=sd * std.scale)


def sgc_marginal_pdf(dist: SgcDistribution, index: int, abscissae: Optional[np.ndarray] = None) -> DensityGrid:
    if not 0 <= index < dist.p:
        raise IndexError(f"Component {index} out of range for p = {dist.p}")
    mean = float(dist.mean[index])
    sd = float(dist.marginal_sd[index])
    if abscissae is None:
        abscissae = equispaced(mean, 8.0 * sd, 801)
    law = marginal_law(mean, sd, float(dist.skewness[index]))
    return DensityGrid(np.asarray(abscissae, dtype=float), law.pdf(abscissae))


def pair_marginal(dist: SgcDistribution, i: int, j: int) -> SgcDistribution:
    """Bivariate SGC of components (i, j)."""
    cols = dense_inverse_columns(dist.factor, [i, j])
    cov = np.array([[cols[i, 0], cols[i, 1]], [cols[j, 0], cols[j, 1]]])
    cov = 0.5 * (cov + cov.T)
    return SgcDistribution.from_covariance(dist.mean[[i, j]], cov, dist.skewness[[i, j]])


def sgc_contour_grid(
    dist: SgcDistribution,
    i: int = 0,
    j: int = 1,
    points: int = 101,
    half_width: float = 4.0,
) -> pd.DataFrame:
    """Bivariate density of components (i, j) on a square grid, as (x, y, density) rows."""
    pair = pair_marginal(dist, i, j) if dist.p > 2 or (i, j) != (0, 1) else dist
    sd = pair.marginal_sd
    xs = equispaced(pair.mean[0], half_width * sd[0], points)
    ys = equispaced(pair.mean[1], half_width * sd[1], points)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    grid = np.column_stack([gx.ravel(), gy.ravel()])
    density = np.exp(sgc_logpdf(pair, grid))
    return pd.DataFrame({"x": grid[:, 0], "y": grid[:, 1], "density": density})
