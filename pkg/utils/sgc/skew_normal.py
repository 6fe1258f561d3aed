"""Standardized skew-normal laws and the Gaussian-to-skew-normal quantile transform."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import stats
from scipy.special import log_ndtr, ndtri_exp

from ..errors import OutOfRange

LOG_HALF = float(np.log(0.5))
_SKEW_CONST = 0.5 * (4.0 - np.pi)

#: Supremum of the skew-normal standardized skewness (shape -> infinity).
SKEWNESS_MAX = float(_SKEW_CONST * (2.0 / np.pi) ** 1.5 / (1.0 - 2.0 / np.pi) ** 1.5)


def shape_to_skewness(alpha) -> np.ndarray:
    """Standardized skewness of a skew-normal law with shape ``alpha``."""
    alpha = np.asarray(alpha, dtype=float)
    delta = alpha / np.sqrt(1.0 + alpha * alpha)
    m = delta * np.sqrt(2.0 / np.pi)
    return _SKEW_CONST * m**3 / (1.0 - m * m) ** 1.5


def skewness_to_shape(s: float) -> float:
    """Shape parameter whose skew-normal has standardized skewness ``s``.

    The skewness is an increasing function of m / sqrt(1 - m^2) with
    m = delta sqrt(2 / pi), so the inverse is available in closed form.

    Raises
    ------
    OutOfRange
        When ``|s| >= SKEWNESS_MAX``.
    """
    s = float(s)
    if not np.isfinite(s) or abs(s) >= SKEWNESS_MAX:
        raise OutOfRange(f"Skewness {s} outside the skew-normal range (-{SKEWNESS_MAX:.5f}, {SKEWNESS_MAX:.5f}).")
    if s == 0.0:
        return 0.0
    t = np.cbrt(abs(s) / _SKEW_CONST)
    m = t / np.sqrt(1.0 + t * t)
    delta = m * np.sqrt(0.5 * np.pi)
    if delta >= 1.0:
        raise OutOfRange(f"Skewness {s} is too close to the skew-normal supremum.")
    alpha = delta / np.sqrt(1.0 - delta * delta)
    return float(np.copysign(alpha, s))


@dataclass(frozen=True)
class SkewNormalStd:
    """The skew-normal with mean 0, variance 1 and standardized skewness ``skewness``."""

    skewness: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "skewness", float(self.skewness))
        skewness_to_shape(self.skewness)

    @cached_property
    def shape(self) -> float:
        return skewness_to_shape(self.skewness)

    @cached_property
    def scale(self) -> float:
        delta = self.shape / np.sqrt(1.0 + self.shape**2)
        return float(1.0 / np.sqrt(1.0 - 2.0 * delta * delta / np.pi))

    @cached_property
    def location(self) -> float:
        delta = self.shape / np.sqrt(1.0 + self.shape**2)
        return float(-self.scale * delta * np.sqrt(2.0 / np.pi))

    @cached_property
    def law(self):
        return stats.skewnorm(self.shape, loc=self.location, scale=self.scale)

    @property
    def is_gaussian(self) -> bool:
        return self.skewness == 0.0

    def pdf(self, x):
        return self.law.pdf(x)

    def logpdf(self, x):
        return self.law.logpdf(x)

    def quantile_transform(self, z, tol: float = 1e-12, max_iter: int = 100) -> np.ndarray:
        return _quantile_transform(self, np.asarray(z, dtype=float), tol, max_iter)


def _quantile_transform(dist: SkewNormalStd, z: np.ndarray, tol: float, max_iter: int) -> np.ndarray:
    """Solve F_SN(x) = Phi(z) elementwise by bracketed Newton iterations on log-probabilities."""
    flat = np.atleast_1d(z).astype(float).ravel()
    upper = flat > 0.0
    target = np.where(upper, log_ndtr(-flat), log_ndtr(flat))
    x = flat.copy()
    lo = np.full_like(flat, -40.0)
    hi = np.full_like(flat, 40.0)
    active = np.isfinite(flat)
    law = dist.law

    for _ in range(max_iter):
        if not np.any(active):
            break
        xa = x[active]
        up = upper[active]
        log_tail = np.where(up, law.logsf(xa), law.logcdf(xa))
        # increasing in x on both branches
        h = np.where(up, target[active] - log_tail, log_tail - target[active])
        with np.errstate(over="ignore", invalid="ignore"):
            dh = np.exp(law.logpdf(xa) - log_tail)
        lo_a = np.where(h < 0.0, xa, lo[active])
        hi_a = np.where(h > 0.0, xa, hi[active])
        with np.errstate(divide="ignore", invalid="ignore"):
            step = xa - h / dh
        bad = ~np.isfinite(step) | (step <= lo_a) | (step >= hi_a)
        new = np.where(bad, 0.5 * (lo_a + hi_a), step)
        done = (np.abs(new - xa) <= tol * np.maximum(1.0, np.abs(xa))) | (h == 0.0)
        idx = np.flatnonzero(active)
        x[idx] = new
        lo[idx] = lo_a
        hi[idx] = hi_a
        active[idx[done]] = False

    x[~np.isfinite(flat)] = flat[~np.isfinite(flat)]
    return x.reshape(np.shape(z))


def skew_map(z, s: float) -> tuple[np.ndarray, np.ndarray]:
    """g(z) = F_SN^{-1}(Phi(z)) and its derivative g'(z) = phi(z) / f_SN(g(z)).

    Examples
    --------
    >>> g, dg = skew_map([0.5], 0.0)
    >>> float(g[0]), float(dg[0])
    (0.5, 1.0)
    """
    z = np.asarray(z, dtype=float)
    if s == 0.0:
        return z.copy(), np.ones_like(z)
    dist = SkewNormalStd(s)
    g = dist.quantile_transform(z)
    return g, np.exp(stats.norm.logpdf(z) - dist.logpdf(g))


def log_skew_map_derivative(z, s: float) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if s == 0.0:
        return np.zeros_like(z)
    dist = SkewNormalStd(s)
    return stats.norm.logpdf(z) - dist.logpdf(dist.quantile_transform(z))


def skew_map_inverse(x, s: float) -> np.ndarray:
    """g^{-1}(x) = Phi^{-1}(F_SN(x)), evaluated on whichever tail keeps precision."""
    x = np.asarray(x, dtype=float)
    if s == 0.0:
        return x.copy()
    law = SkewNormalStd(s).law
    log_cdf = law.logcdf(x)
    lower = log_cdf <= LOG_HALF
    out = np.empty_like(np.atleast_1d(x), dtype=float)
    flat_x = np.atleast_1d(x)
    flat_cdf = np.atleast_1d(log_cdf)
    flat_lower = np.atleast_1d(lower)
    out[flat_lower] = ndtri_exp(flat_cdf[flat_lower])
    if np.any(~flat_lower):
        out[~flat_lower] = -ndtri_exp(law.logsf(flat_x[~flat_lower]))
    return out.reshape(np.shape(x))


def skew_map_inverse_log_jacobian(x, s: float) -> tuple[np.ndarray, np.ndarray]:
    """z = g^{-1}(x) and log dz/dx = log f_SN(x) - log phi(z).

    Where the tail probability of ``x`` underflows, ``z`` is infinite and the
    log-Jacobian is -inf.
    """
    x = np.asarray(x, dtype=float)
    if s == 0.0:
        return x.copy(), np.zeros_like(x)
    z = skew_map_inverse(x, s)
    finite = np.isfinite(z)
    with np.errstate(invalid="ignore"):
        log_jac = SkewNormalStd(s).logpdf(x) - stats.norm.logpdf(z)
    return z, np.where(finite, log_jac, -np.inf)
