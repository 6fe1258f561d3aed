"""Adaptive random-walk Metropolis on the joint (latent, free hyperparameter) space."""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from ..density import DensityGrid
from ..errors import LgmError
from ..lgm.laplace import laplace_fit
from ..lgm.model import Dataset, LatentModel
from ..lgm.sparse_linalg import cholesky_factor, dense_inverse_columns
from ..streams import named_stream

TARGET_ACCEPTANCE = (0.23, 0.44)
ADAPT_WINDOW = 100
CHUNK = 1000
MAX_DIMENSION = 200


@dataclass(frozen=True)
class Chain:
    """Kept coordinates of every iteration, burn-in included."""

    draws: np.ndarray
    names: tuple[str, ...]
    acceptance_rate: float
    seed: int
    burn_in: int
    chain_index: int = 0
    scale: float = 1.0

    @property
    def iterations(self) -> int:
        return int(self.draws.shape[0])

    def post_burn_in(self, discard: Optional[int] = None) -> np.ndarray:
        discard = self.burn_in if discard is None else int(discard)
        return self.draws[discard:]


@dataclass(frozen=True)
class ChainSummary:
    names: tuple[str, ...]
    mean: np.ndarray
    sd: np.ndarray
    skewness: np.ndarray
    ess: np.ndarray
    histograms: tuple[DensityGrid, ...] = field(repr=False)
    acceptance_rates: tuple[float, ...] = ()
    warnings: tuple[str, ...] = ()

    def to_json_data(self) -> dict:
        return {
            "schema_version": 1,
            "parameters": [
                {
                    "name": name,
                    "mean": float(self.mean[i]),
                    "sd": float(self.sd[i]),
                    "skewness": float(self.skewness[i]),
                    "ess": float(self.ess[i]),
                }
                for i, name in enumerate(self.names)
            ],
            "acceptance_rates": [float(r) for r in self.acceptance_rates],
            "warnings": list(self.warnings),
        }


class _JointTarget:
    """log p(f, theta_free | y) up to a constant."""

    def __init__(self, model: LatentModel, data: Dataset, fixed_theta: Optional[np.ndarray]):
        self.model = model
        self.y = data.y
        self.fixed_theta = fixed_theta
        self.free = fixed_theta is None and model.theta_dim > 0
        self.p = model.p
        if not self.free:
            theta = model.initial_theta() if fixed_theta is None else fixed_theta
            self.theta = np.atleast_1d(np.asarray(theta, dtype=float))
            self.q_fixed = model.prior_precision(self.theta)

    @property
    def dim(self) -> int:
        return self.p + (self.model.theta_dim if self.free else 0)

    def split(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if self.free:
            return x[: self.p], x[self.p :]
        return x, self.theta

    def __call__(self, x: np.ndarray) -> float:
        f, theta = self.split(x)
        try:
            if self.free:
                q = self.model.prior_precision(theta)
                log_det = cholesky_factor(q).log_det
                prior = 0.5 * log_det - 0.5 * f @ (q @ f) + self.model.hyperprior(theta)
            else:
                prior = -0.5 * f @ (self.q_fixed @ f)
            eta = np.asarray(self.model.design @ f, dtype=float).ravel()
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                ll, _, _ = self.model.likelihood.loglik(theta, self.y, eta)
        except (LgmError, ValueError, np.linalg.LinAlgError):
            return -np.inf
        value = float(np.sum(ll) + prior)
        return value if np.isfinite(value) else -np.inf


def _initial_state(target: _JointTarget, model: LatentModel, data: Dataset) -> tuple[np.ndarray, np.ndarray]:
    theta = target.theta if not target.free else model.initial_theta()
    approx = laplace_fit(model, data, theta)
    cov_f = dense_inverse_columns(approx.factor, range(model.p))
    cov_f = 0.5 * (cov_f + cov_f.T)
    if not target.free:
        return approx.mean.copy(), cov_f
    d = target.dim
    cov = np.zeros((d, d))
    cov[: model.p, : model.p] = cov_f
    cov[model.p :, model.p :] = 0.25 * np.eye(model.theta_dim)
    return np.concatenate([approx.mean, theta]), cov


def rw_metropolis(
    model: LatentModel,
    data: Dataset,
    fixed_theta=None,
    iterations: int = 200_000,
    burn_in: int = 20_000,
    seed: int = 0,
    *,
    chain_index: int = 0,
    keep: Optional[Sequence[int]] = None,
) -> Chain:
    """Gaussian random-walk Metropolis started at the Laplace mode.

    The proposal covariance is the Laplace covariance times a scale that is
    adapted during burn-in toward an acceptance rate in [0.23, 0.44] and
    frozen afterwards. ``keep`` selects the stored coordinates (default:
    fixed effects and free hyperparameters).
    """
    if iterations <= burn_in:
        raise ValueError(f"iterations ({iterations}) must exceed burn_in ({burn_in})")
    if fixed_theta is None and model.fixed_theta is not None:
        fixed_theta = model.fixed_theta
    fixed = None if fixed_theta is None else np.atleast_1d(np.asarray(fixed_theta, dtype=float))
    target = _JointTarget(model, data, fixed)
    d = target.dim
    if d > MAX_DIMENSION:
        raise ValueError(f"Sampler dimension {d} exceeds the supported {MAX_DIMENSION}.")

    names = model.component_names()
    if target.free:
        names = names + [h.name for h in model.hypers]
    if keep is None:
        keep = list(model.fixed_effect_indices()) or list(range(model.p))
        if target.free:
            keep += list(range(model.p, d))
    keep = np.asarray(keep, dtype=int)

    x, cov = _initial_state(target, model, data)
    chol = np.linalg.cholesky(cov + 1e-12 * np.eye(d) * max(1.0, float(np.max(np.diag(cov)))))
    current = target(x)
    if not np.isfinite(current):
        raise LgmError(f"Log posterior is not finite at the starting point (value {current}).")

    rng = named_stream(seed, f"oracle-chain-{chain_index}")
    scale = 2.38 / np.sqrt(d)
    draws = np.empty((iterations, keep.size))
    accepted_total = 0
    accepted_window = 0
    for start in range(0, iterations, CHUNK):
        stop = min(start + CHUNK, iterations)
        steps = rng.standard_normal((stop - start, d)) @ chol.T
        log_u = np.log(rng.uniform(size=stop - start))
        for offset in range(stop - start):
            it = start + offset
            proposal = x + scale * steps[offset]
            value = target(proposal)
            if log_u[offset] < value - current:
                x, current = proposal, value
                accepted_window += 1
                if it >= burn_in:
                    accepted_total += 1
            draws[it] = x[keep]
            if it < burn_in and (it + 1) % ADAPT_WINDOW == 0:
                rate = accepted_window / ADAPT_WINDOW
                if rate < TARGET_ACCEPTANCE[0]:
                    scale *= 0.8
                elif rate > TARGET_ACCEPTANCE[1]:
                    scale *= 1.25
                accepted_window = 0
        if not np.isfinite(current):
            raise LgmError(f"Chain {chain_index} diverged at iteration {stop}: log posterior {current}.")

    return Chain(
        draws=draws,
        names=tuple(names[i] for i in keep),
        acceptance_rate=accepted_total / (iterations - burn_in),
        seed=int(seed),
        burn_in=int(burn_in),
        chain_index=int(chain_index),
        scale=float(scale),
    )


def run_chains(
    model: LatentModel,
    data: Dataset,
    fixed_theta=None,
    iterations: int = 200_000,
    burn_in: int = 20_000,
    seed: int = 0,
    chains: int = 1,
    n_jobs: int = 1,
    keep: Optional[Sequence[int]] = None,
) -> list[Chain]:
    """Independent chains on streams ``oracle-chain-<i>``; results in chain order."""

    def run(index: int) -> Chain:
        return rw_metropolis(
            model, data, fixed_theta, iterations, burn_in, seed, chain_index=index, keep=keep
        )

    if n_jobs > 1 and chains > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            return list(pool.map(run, range(chains)))
    return [run(i) for i in range(chains)]


def ess(x: np.ndarray) -> float:
    """Effective sample size with Geyer's initial positive sequence truncation."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4:
        return float(n)
    centred = x - x.mean()
    var = float(centred @ centred) / n
    if var <= 0.0:
        return float("nan")
    size = 1 << int(np.ceil(np.log2(2 * n)))
    spectrum = np.fft.rfft(centred, n=size)
    acov = np.fft.irfft(spectrum * np.conj(spectrum), n=size)[:n] / n
    rho = acov / acov[0]
    total = 0.0
    for k in range(0, n - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair < 0.0:
            break
        total += pair
    tau = max(-1.0 + 2.0 * total, 1.0 / n)
    return float(n / tau)


def _histogram(values: np.ndarray) -> DensityGrid:
    counts, edges = np.histogram(values, bins="fd", density=True)
    if counts.size < 2:
        counts, edges = np.histogram(values, bins=2, density=True)
    centres = 0.5 * (edges[:-1] + edges[1:])
    return DensityGrid(centres, counts).normalized()


def chain_summary(chain: Chain | Sequence[Chain], discard: Optional[int] = None) -> ChainSummary:
    """Moments, ESS and Freedman-Diaconis histograms after discarding burn-in.

    A list of chains is pooled after each chain's burn-in; ESS is summed.
    """
    chains = [chain] if isinstance(chain, Chain) else list(chain)
    if not chains:
        raise ValueError("chain_summary needs at least one chain.")
    parts = []
    for c in chains:
        kept = c.post_burn_in(discard)
        if kept.shape[0] < 2:
            raise ValueError(f"Chain {c.chain_index} has {kept.shape[0]} draws after discarding burn-in.")
        parts.append(kept)
    pooled = np.vstack(parts)
    names = chains[0].names
    notes: list[str] = []
    ess_values = np.zeros(len(names))
    histograms = []
    for j, name in enumerate(names):
        column = pooled[:, j]
        if np.ptp(column) == 0.0:
            note = f"{name}: degenerate chain (constant value {column[0]!r})"
            notes.append(note)
            warnings.warn(note, RuntimeWarning, stacklevel=2)
            ess_values[j] = float("nan")
            histograms.append(DensityGrid(np.array([column[0] - 0.5, column[0] + 0.5]), np.ones(2)))
            continue
        ess_values[j] = sum(ess(p[:, j]) for p in parts)
        histograms.append(_histogram(column))
    sd = pooled.std(axis=0, ddof=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        skew = np.where(sd > 0.0, stats.skew(pooled, axis=0, bias=False), 0.0)
    return ChainSummary(
        names=tuple(names),
        mean=pooled.mean(axis=0),
        sd=sd,
        skewness=np.asarray(skew, dtype=float),
        ess=ess_values,
        histograms=tuple(histograms),
        acceptance_rates=tuple(c.acceptance_rate for c in chains),
        warnings=tuple(notes),
    )
