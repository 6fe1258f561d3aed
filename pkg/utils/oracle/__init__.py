"""
Reference engines for validating the approximations: adaptive random-walk
Metropolis and dense-grid quadrature of small posteriors.
"""

from .mcmc import Chain, ChainSummary, chain_summary, ess, run_chains, rw_metropolis
from .quadrature import PosteriorGrid2D, exact_posterior_quadrature

__all__ = [
    "Chain",
    "ChainSummary",
    "PosteriorGrid2D",
    "chain_summary",
    "ess",
    "exact_posterior_quadrature",
    "run_chains",
    "rw_metropolis",
]
