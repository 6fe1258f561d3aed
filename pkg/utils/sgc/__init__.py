"""
Skewed Gaussian with Gaussian copula (SGC) posteriors: the distribution
itself and variational inference of its marginal skewness.
"""

from .distribution import SgcDistribution, sgc_contour_grid, sgc_logpdf, sgc_marginal_pdf, sgc_sample
from .skew_normal import (
    SKEWNESS_MAX,
    SkewNormalStd,
    skew_map,
    skew_map_inverse,
    skew_map_inverse_log_jacobian,
    skewness_to_shape,
)
from .skew_vb import (
    BlockSplit,
    FftGrid,
    MomentCoeffTable,
    SkewnessFit,
    WhitenedModel,
    eta_density_blocked,
    eta_density_fft,
    expected_nll_sgc,
    fit_sgc,
    gaussian_even_moments,
    kld_sgc_gaussian,
    optimize_skewness,
    whiten,
)

__all__ = [
    "SKEWNESS_MAX",
    "BlockSplit",
    "FftGrid",
    "MomentCoeffTable",
    "SgcDistribution",
    "SkewNormalStd",
    "SkewnessFit",
    "WhitenedModel",
    "eta_density_blocked",
    "eta_density_fft",
    "expected_nll_sgc",
    "fit_sgc",
    "gaussian_even_moments",
    "kld_sgc_gaussian",
    "optimize_skewness",
    "sgc_contour_grid",
    "sgc_logpdf",
    "sgc_marginal_pdf",
    "sgc_sample",
    "skew_map",
    "skew_map_inverse",
    "skew_map_inverse_log_jacobian",
    "skewness_to_shape",
    "whiten",
]
