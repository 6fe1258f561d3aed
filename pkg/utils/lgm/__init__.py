"""
Latent Gaussian models: likelihood families, sparse priors, the Laplace
approximation and its low-rank variational corrections.
"""

from .laplace import GaussianApprox, TaylorSite, eta_marginal, eta_moments, laplace_fit, taylor_site
from .likelihoods import (
    BernoulliSensSpec,
    BinomialLogit,
    GaussianObs,
    GeneralizedPareto,
    Poisson,
    StudentT,
    gpd_scale,
    loglik_eval,
)
from .model import (
    Ar1Effect,
    Dataset,
    FixedEffects,
    HyperParameter,
    IidEffect,
    LatentModel,
    assemble_design,
    linear_predictor,
    prior_precision,
    validate_model,
)
from .sparse_linalg import cholesky_factor, selected_inverse
from .vb_correct import (
    CorrectionIndexSet,
    CorrectionProblem,
    MeanCorrection,
    VarCorrection,
    solve_corrected_mean,
    vb_mean_correct,
    vb_mean_objective,
    vb_var_correct,
    vb_var_objective,
)

__all__ = [
    "Ar1Effect",
    "BernoulliSensSpec",
    "BinomialLogit",
    "CorrectionIndexSet",
    "CorrectionProblem",
    "Dataset",
    "FixedEffects",
    "GaussianApprox",
    "GaussianObs",
    "GeneralizedPareto",
    "HyperParameter",
    "IidEffect",
    "LatentModel",
    "MeanCorrection",
    "Poisson",
    "StudentT",
    "TaylorSite",
    "VarCorrection",
    "assemble_design",
    "cholesky_factor",
    "eta_marginal",
    "eta_moments",
    "gpd_scale",
    "laplace_fit",
    "linear_predictor",
    "loglik_eval",
    "prior_precision",
    "selected_inverse",
    "solve_corrected_mean",
    "taylor_site",
    "validate_model",
    "vb_mean_correct",
    "vb_mean_objective",
    "vb_var_correct",
    "vb_var_objective",
]
