"""Observation likelihood families with analytic derivatives in the linear predictor.

Every family evaluates, elementwise over observations,

    loglik = log p(y_i | eta_i, theta),  d1 = d loglik / d eta,  d2 = d^2 loglik / d eta^2

including eta-free constants such as ``log(y!)`` so expected log-likelihoods
are comparable across approximation strategies.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import ClassVar, Optional, Union

import numpy as np
from scipy.special import expit, gammaln, log_expit

from ..errors import LikelihoodDomainError

LOG_2PI = float(np.log(2.0 * np.pi))


def _hyper_precision(theta: np.ndarray, index: Optional[int], fixed: float) -> float:
    if index is None:
        return float(fixed)
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if index >= theta.size:
        raise ValueError(f"Hyper-index {index} out of range for theta of length {theta.size}.")
    return float(np.exp(theta[index]))


def gpd_scale(eta, xi: float, alpha: float = 0.5):
    """Scale of a generalized Pareto law whose alpha-quantile is ``exp(eta)``.

    Examples
    --------
    >>> round(float(gpd_scale(0.0, 0.1, 0.5)), 4)
    1.3933
    """
    if not xi > 0.0:
        raise ValueError(f"tail_xi must be > 0, got {xi}")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"quantile_level must lie in (0, 1), got {alpha}")
    denom = np.expm1(-xi * np.log1p(-alpha))
    return xi * np.exp(eta) / denom


@dataclass(frozen=True)
class Poisson:
    name: ClassVar[str] = "poisson"
    integer_response: ClassVar[bool] = True

    def support_violations(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return (y < 0) | (y != np.round(y)) | ~np.isfinite(y)

    def loglik(self, theta, y, eta):
        mu = np.exp(eta)
        ll = y * eta - mu - gammaln(y + 1.0)
        return ll, y - mu, -mu

    def simulate(self, theta, eta, rng: np.random.Generator) -> np.ndarray:
        return rng.poisson(np.exp(eta)).astype(float)


@dataclass(frozen=True)
class StudentT:
    """sqrt(tau) * (y - eta) follows a standard Student-t with ``dof`` degrees of freedom."""

    dof: float
    log_precision_index: Optional[int] = None
    precision: float = 1.0
    name: ClassVar[str] = "student-t"
    integer_response: ClassVar[bool] = False

    def __post_init__(self) -> None:
        if not self.dof > 0.0:
            raise ValueError(f"dof must be > 0, got {self.dof}")
        if not self.precision > 0.0:
            raise ValueError(f"precision must be > 0, got {self.precision}")

    def support_violations(self, y: np.ndarray) -> np.ndarray:
        return ~np.isfinite(np.asarray(y, dtype=float))

    def loglik(self, theta, y, eta):
        tau = _hyper_precision(theta, self.log_precision_index, self.precision)
        nu = self.dof
        r = y - eta
        q = nu + tau * r * r
        const = (
            gammaln(0.5 * (nu + 1.0))
            - gammaln(0.5 * nu)
            - 0.5 * np.log(nu * np.pi)
            + 0.5 * np.log(tau)
        )
        ll = const - 0.5 * (nu + 1.0) * np.log1p(tau * r * r / nu)
        d1 = (nu + 1.0) * tau * r / q
        d2 = -(nu + 1.0) * tau * (nu - tau * r * r) / (q * q)
        return ll, d1, d2

    def simulate(self, theta, eta, rng: np.random.Generator) -> np.ndarray:
        tau = _hyper_precision(theta, self.log_precision_index, self.precision)
        return eta + rng.standard_t(self.dof, size=np.shape(eta)) / np.sqrt(tau)


@dataclass(frozen=True)
class GeneralizedPareto:
    """Generalized Pareto responses parameterized through their alpha-quantile exp(eta)."""

    tail_xi: float
    quantile_level: float = 0.5
    name: ClassVar[str] = "gpd"
    integer_response: ClassVar[bool] = False

    def __post_init__(self) -> None:
        if not self.tail_xi > 0.0:
            raise ValueError(f"tail_xi must be > 0, got {self.tail_xi}")
        if not 0.0 < self.quantile_level < 1.0:
            raise ValueError(f"quantile_level must lie in (0, 1), got {self.quantile_level}")

    def support_violations(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return (y < 0) | ~np.isfinite(y)

    def loglik(self, theta, y, eta):
        xi = self.tail_xi
        denom = np.expm1(-xi * np.log1p(-self.quantile_level))
        # u = xi * y / sigma
        u = y * denom * np.exp(-eta)
        if np.any(1.0 + u <= 0.0):
            raise LikelihoodDomainError("GPD support constraint 1 + xi*y/sigma > 0 violated.")
        k = 1.0 + 1.0 / xi
        ll = -eta - np.log(xi / denom) - k * np.log1p(u)
        frac = u / (1.0 + u)
        d1 = -1.0 + k * frac
        d2 = -k * frac / (1.0 + u)
        return ll, d1, d2

    def simulate(self, theta, eta, rng: np.random.Generator) -> np.ndarray:
        sigma = gpd_scale(eta, self.tail_xi, self.quantile_level)
        uniform = rng.uniform(size=np.shape(eta))
        return sigma * np.expm1(-self.tail_xi * np.log(uniform)) / self.tail_xi


@dataclass(frozen=True)
class BernoulliSensSpec:
    """Bernoulli test outcomes with imperfect sensitivity and specificity.

    P(y = 1) = sensitivity * pi(eta) + (1 - specificity) * (1 - pi(eta)),
    with pi the inverse logit.
    """

    sensitivity: float
    specificity: float
    name: ClassVar[str] = "sens-spec"
    integer_response: ClassVar[bool] = True

    def __post_init__(self) -> None:
        for label, value in (("sensitivity", self.sensitivity), ("specificity", self.specificity)):
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{label} must lie in [0, 1], got {value}")
        if self.sensitivity + self.specificity <= 1.0:
            raise ValueError("sensitivity + specificity must exceed 1 for an informative test.")

    def support_violations(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return ~np.isin(y, (0.0, 1.0))

    def loglik(self, theta, y, eta):
        floor = 1.0 - self.specificity
        slope = self.sensitivity + self.specificity - 1.0
        pi = expit(eta)
        dpi = pi * (1.0 - pi)
        d2pi = dpi * (1.0 - 2.0 * pi)
        p1 = floor + slope * pi
        p0 = (1.0 - floor) - slope * pi
        positive = y > 0.5
        prob = np.where(positive, p1, p0)
        sign = np.where(positive, 1.0, -1.0)
        ll = np.log(prob)
        g = sign * slope * dpi / prob
        d1 = g
        d2 = sign * slope * d2pi / prob - g * g
        return ll, d1, d2

    def simulate(self, theta, eta, rng: np.random.Generator) -> np.ndarray:
        pi = expit(eta)
        p1 = (1.0 - self.specificity) + (self.sensitivity + self.specificity - 1.0) * pi
        return (rng.uniform(size=np.shape(eta)) < p1).astype(float)


@dataclass(frozen=True)
class BinomialLogit:
    trials: int = 1
    name: ClassVar[str] = "binomial"
    integer_response: ClassVar[bool] = True

    def __post_init__(self) -> None:
        if int(self.trials) != self.trials or self.trials < 1:
            raise ValueError(f"trials must be a positive integer, got {self.trials}")

    def support_violations(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return (y < 0) | (y > self.trials) | (y != np.round(y)) | ~np.isfinite(y)

    def loglik(self, theta, y, eta):
        n = float(self.trials)
        log_choose = gammaln(n + 1.0) - gammaln(y + 1.0) - gammaln(n - y + 1.0)
        ll = log_choose + y * log_expit(eta) + (n - y) * log_expit(-eta)
        pi = expit(eta)
        return ll, y - n * pi, -n * pi * (1.0 - pi)

    def simulate(self, theta, eta, rng: np.random.Generator) -> np.ndarray:
        return rng.binomial(int(self.trials), expit(eta)).astype(float)


@dataclass(frozen=True)
class GaussianObs:
    log_precision_index: Optional[int] = None
    precision: float = 1.0
    name: ClassVar[str] = "gaussian"
    integer_response: ClassVar[bool] = False

    def __post_init__(self) -> None:
        if not self.precision > 0.0:
            raise ValueError(f"precision must be > 0, got {self.precision}")

    def support_violations(self, y: np.ndarray) -> np.ndarray:
        return ~np.isfinite(np.asarray(y, dtype=float))

    def loglik(self, theta, y, eta):
        tau = _hyper_precision(theta, self.log_precision_index, self.precision)
        r = y - eta
        ll = 0.5 * np.log(tau) - 0.5 * LOG_2PI - 0.5 * tau * r * r
        return ll, tau * r, np.full_like(r, -tau, dtype=float)

    def simulate(self, theta, eta, rng: np.random.Generator) -> np.ndarray:
        tau = _hyper_precision(theta, self.log_precision_index, self.precision)
        return eta + rng.standard_normal(np.shape(eta)) / np.sqrt(tau)


LikelihoodFamily = Union[Poisson, StudentT, GeneralizedPareto, BernoulliSensSpec, BinomialLogit, GaussianObs]

FAMILIES: dict[str, type] = {
    cls.name: cls
    for cls in (Poisson, StudentT, GeneralizedPareto, BernoulliSensSpec, BinomialLogit, GaussianObs)
}


def loglik_eval(family: LikelihoodFamily, theta, y, eta):
    """Log-likelihood and its first two eta-derivatives, elementwise.

    Raises ``LikelihoodDomainError`` when a response lies outside the family's support.
    """
    y_arr = np.asarray(y, dtype=float)
    eta_arr = np.asarray(eta, dtype=float)
    if not np.all(np.isfinite(eta_arr)):
        raise ValueError("eta must be finite.")
    bad = family.support_violations(y_arr)
    if np.any(bad):
        first = int(np.flatnonzero(np.atleast_1d(bad))[0])
        value = float(np.atleast_1d(y_arr)[first])
        raise LikelihoodDomainError(
            f"Response {value!r} at position {first} is outside the {family.name} support."
        )
    ll, d1, d2 = family.loglik(theta, y_arr, eta_arr)
    return ll, d1, d2


def family_to_dict(family: LikelihoodFamily) -> dict:
    return {"family": family.name, **asdict(family)}


def family_from_dict(payload: dict) -> LikelihoodFamily:
    payload = dict(payload)
    name = payload.pop("family", None)
    if name not in FAMILIES:
        raise ValueError(f"Unknown likelihood family: {name!r}")
    return FAMILIES[name](**payload)
