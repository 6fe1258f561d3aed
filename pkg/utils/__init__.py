"""
Approximate inference for latent Gaussian models: the Laplace/variational
ladder, skewed Gaussian-copula posteriors, and reference oracles.
"""

from .density import DensityGrid
from .errors import (
    CholeskyFailure,
    DenseLimitExceeded,
    GridTooNarrow,
    IndefiniteSystem,
    LgmError,
    LikelihoodDomainError,
    ManifestError,
    ModeSearchFailure,
    NonConvergence,
    OutOfRange,
)
from .inla_pipeline import STRATEGIES, FitReport, InlaOptions, ThetaGrid, explore_theta, fit_inla, fit_strategies
from .streams import named_stream

__all__ = [
    "CholeskyFailure",
    "DenseLimitExceeded",
    "DensityGrid",
    "FitReport",
    "GridTooNarrow",
    "IndefiniteSystem",
    "InlaOptions",
    "LgmError",
    "LikelihoodDomainError",
    "ManifestError",
    "ModeSearchFailure",
    "NonConvergence",
    "OutOfRange",
    "STRATEGIES",
    "ThetaGrid",
    "explore_theta",
    "fit_inla",
    "fit_strategies",
    "named_stream",
]
