"""Three-stage INLA pipeline and the approximation ladder.

Stage 1 evaluates the Laplace-ratio posterior of the hyperparameters,
Stage 2 explores it on a standardized grid, and Stage 3 mixes the
conditional latent marginals of the requested strategy over that grid:

    gaussian -> vb-mean -> vb-mean-var -> sgc-vb

Each rung consumes the previous rung's mean and precision at the same
hyperparameter value.
"""

from __future__ import annotations

import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import product
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from .density import DensityGrid, equispaced
from .errors import LgmError, ModeSearchFailure
from .lgm.laplace import GaussianApprox, eta_moments, laplace_fit, taylor_site
from .lgm.likelihoods import loglik_eval
from .lgm.model import SCHEMA_VERSION, Dataset, LatentModel, linear_predictor
from .lgm.sparse_linalg import cholesky_factor
from .lgm.vb_correct import CorrectionProblem, vb_mean_correct, vb_var_correct
from .sgc.distribution import marginal_law
from .sgc.skew_vb import FftGrid, optimize_skewness

STRATEGIES = ("gaussian", "vb-mean", "vb-mean-var", "sgc-vb")
STRATEGY_LABELS = {
    "gaussian": "Gaussian",
    "vb-mean": "VB-M",
    "vb-mean-var": "VB-M+V",
    "sgc-vb": "SGC-VB",
}

#: Largest number of free hyperparameters the integration grid handles.
MAX_GRID_HYPERS = 2

_VERBOSE = True


def set_verbose(enabled: bool) -> None:
    global _VERBOSE
    _VERBOSE = bool(enabled)


def step(message: str) -> None:
    if _VERBOSE:
        print(f"STEP: {message}")


def _soft_warning(message: str, sink: list[str]) -> None:
    sink.append(message)
    warnings.warn(message, RuntimeWarning, stacklevel=3)


# ---------------------------------------------------------------------------
# Options
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InlaOptions:
    tol: float = 1e-8
    max_iter: int = 100
    gh_nodes: int = 15
    correction_indices: Optional[tuple[int, ...]] = None
    skew_indices: Optional[tuple[int, ...]] = None
    fft_points: int = 1024
    fft_half_width: float = 8.0
    dense_limit: int = 1000
    density_path: str = "auto"
    block_size: int = 30
    grid_step: float = 0.5
    grid_cutoff: float = 2.5
    marginal_points: int = 801
    marginal_half_width: float = 8.0
    n_jobs: int = 1
    vb_max_iter: int = 200
    eta_summaries: bool = True

    def __post_init__(self) -> None:
        if self.density_path not in ("auto", "fft", "blocked"):
            raise ValueError(f"density_path must be auto, fft or blocked, got {self.density_path!r}")
        if self.n_jobs < 1:
            raise ValueError(f"n_jobs must be >= 1, got {self.n_jobs}")
        if self.grid_step <= 0.0 or self.grid_cutoff <= 0.0:
            raise ValueError("grid_step and grid_cutoff must be positive.")

    @classmethod
    def from_args(cls, args) -> "InlaOptions":
        defaults = cls()
        return cls(
            tol=getattr(args, "tol", defaults.tol),
            max_iter=getattr(args, "max_iter", defaults.max_iter),
            gh_nodes=getattr(args, "gh_nodes", defaults.gh_nodes),
            fft_points=getattr(args, "fft_points", defaults.fft_points),
            dense_limit=getattr(args, "dense_limit", defaults.dense_limit),
            density_path=getattr(args, "density_path", defaults.density_path),
            block_size=getattr(args, "block_size", defaults.block_size),
            n_jobs=getattr(args, "n_jobs", defaults.n_jobs),
        )

    @property
    def fft_grid(self) -> FftGrid:
        return FftGrid(points=self.fft_points, half_width=self.fft_half_width)


# ---------------------------------------------------------------------------
# Result types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ThetaGrid:
    points: np.ndarray
    log_weights: np.ndarray
    mode: np.ndarray
    curvature: np.ndarray
    log_posteriors: np.ndarray
    log_cell_volume: float = 0.0

    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights - logsumexp(self.log_weights))

    def __len__(self) -> int:
        return int(self.points.shape[0])

    def to_json_data(self) -> dict:
        return {
            "points": self.points.tolist(),
            "weights": self.weights().tolist(),
            "log_posteriors": [float(v) for v in self.log_posteriors],
            "mode": [float(v) for v in self.mode],
            "curvature": np.atleast_2d(self.curvature).tolist() if self.curvature.size else [],
        }


@dataclass(frozen=True)
class ComponentMarginal:
    name: str
    mean: float
    sd: float
    skewness: float
    density: DensityGrid = field(repr=False)


@dataclass(frozen=True)
class ConditionalFit:
    """One rung of the ladder at one hyperparameter value."""

    strategy: str
    theta: np.ndarray
    approx: GaussianApprox
    mean: np.ndarray
    sd: np.ndarray
    skewness: np.ndarray
    objectives: dict = field(default_factory=dict)
    traces: tuple[dict, ...] = ()
    warnings: tuple[str, ...] = ()
    seconds: float = 0.0


@dataclass(frozen=True)
class FitReport:
    strategy: str
    marginals: tuple[ComponentMarginal, ...]
    theta_grid: ThetaGrid
    timings: dict = field(default_factory=dict)
    objectives: dict = field(default_factory=dict)
    hyper_marginals: tuple[dict, ...] = ()
    eta_summaries: Optional[tuple[dict, ...]] = None
    log_marginal_likelihood: Optional[float] = None
    traces: tuple[dict, ...] = ()
    warnings: tuple[str, ...] = ()
    skewness_vector: Optional[np.ndarray] = field(default=None, repr=False)
    final_approx: Optional[GaussianApprox] = field(default=None, repr=False)

    @property
    def label(self) -> str:
        return STRATEGY_LABELS.get(self.strategy, self.strategy)

    def component(self, name: str) -> ComponentMarginal:
        for marginal in self.marginals:
            if marginal.name == name:
                return marginal
        raise KeyError(f"No marginal named {name!r} in the {self.strategy} report.")

    def to_json_data(self) -> dict:
        """Deterministic JSON payload; wall-clock timings are exported separately."""
        payload = {
            "schema_version": SCHEMA_VERSION,
            "strategy": self.strategy,
            "components": [
                {"name": m.name, "mean": m.mean, "sd": m.sd, "skewness": m.skewness} for m in self.marginals
            ],
            "theta_grid": self.theta_grid.to_json_data(),
            "hyper_marginals": list(self.hyper_marginals),
            "objectives": {k: float(v) for k, v in self.objectives.items()},
            "log_marginal_likelihood": self.log_marginal_likelihood,
            "warnings": list(self.warnings),
        }
        if self.eta_summaries is not None:
            payload["eta"] = list(self.eta_summaries)
        return payload


# ---------------------------------------------------------------------------
# Stage 1
# ---------------------------------------------------------------------------


def log_theta_posterior(
    model: LatentModel,
    data: Dataset,
    theta,
    approx: Optional[GaussianApprox] = None,
    *,
    include_prior: bool = True,
    tol: float = 1e-8,
    max_iter: int = 100,
) -> float:
    """log p(y, mu, theta) - log p_N(mu | y, theta) at the conditional mode mu.

    The Gaussian normalizing constants of prior and approximation cancel.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if approx is None:
        approx = laplace_fit(model, data, theta, tol=tol, max_iter=max_iter)
    q_prior = model.prior_precision(theta)

    eta = linear_predictor(model.design, approx.mean)
    ll, _, _ = loglik_eval(model.likelihood, theta, data.y, eta)
    mu = approx.mean
    value = float(
        np.sum(ll)
        + 0.5 * cholesky_factor(q_prior).log_det
        - 0.5 * mu @ (q_prior @ mu)
        - 0.5 * approx.log_det
    )
    if include_prior:
        value += model.hyperprior(theta)
    return value


# ---------------------------------------------------------------------------
# Stage 2
# ---------------------------------------------------------------------------


def _fd_hessian(fun, x: np.ndarray, h: float = 1e-2) -> np.ndarray:
    d = x.size
    hess = np.empty((d, d))
    f0 = fun(x)
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = h
        hess[i, i] = (fun(x + ei) - 2.0 * f0 + fun(x - ei)) / (h * h)
        for j in range(i + 1, d):
            ej = np.zeros(d)
            ej[j] = h
            value = (fun(x + ei + ej) - fun(x + ei - ej) - fun(x - ei + ej) + fun(x - ei - ej)) / (4.0 * h * h)
            hess[i, j] = hess[j, i] = value
    return hess


def explore_theta(model: LatentModel, data: Dataset, options: Optional[InlaOptions] = None) -> ThetaGrid:
    """Mode search, curvature and grid of the hyperparameter posterior.

    Raises
    ------
    ModeSearchFailure
        When no finite mode is found or the curvature at the mode is not positive.
    """
    options = options or InlaOptions()
    theta0 = model.initial_theta()
    if model.fixed_theta is not None or model.theta_dim == 0:
        try:
            lp = log_theta_posterior(model, data, theta0, tol=options.tol, max_iter=options.max_iter)
        except LgmError:
            lp = float("nan")
        return ThetaGrid(
            points=theta0[None, :],
            log_weights=np.zeros(1),
            mode=theta0,
            curvature=np.zeros((0, 0)),
            log_posteriors=np.array([lp]),
        )
    if model.theta_dim > MAX_GRID_HYPERS:
        raise ValueError(
            f"Grid exploration supports at most {MAX_GRID_HYPERS} free hyperparameters, got {model.theta_dim}"
        )

    cache: dict[tuple, float] = {}

    def neg_log_post(theta) -> float:
        key = tuple(np.round(np.asarray(theta, dtype=float), 12))
        if key not in cache:
            try:
                cache[key] = -log_theta_posterior(model, data, theta, tol=options.tol, max_iter=options.max_iter)
            except (LgmError, ValueError, np.linalg.LinAlgError):
                cache[key] = np.inf
        return cache[key]

    step("Stage 2: locating the hyperparameter mode")
    result = minimize(neg_log_post, theta0, method="Nelder-Mead", options={"xatol": 1e-4, "fatol": 1e-6, "maxiter": 400})
    if not np.isfinite(result.fun):
        raise ModeSearchFailure(f"Hyperparameter mode search found no finite posterior value: {result.message}")
    mode = np.asarray(result.x, dtype=float)
    hess = _fd_hessian(neg_log_post, mode)
    if not np.all(np.isfinite(hess)):
        raise ModeSearchFailure("Curvature at the hyperparameter mode is not finite.")
    eigval, eigvec = np.linalg.eigh(0.5 * (hess + hess.T))
    if np.any(eigval <= 0.0):
        raise ModeSearchFailure(f"Hyperparameter posterior is not curved at the mode (eigenvalues {eigval}).")
    rotation = eigvec / np.sqrt(eigval)[None, :]
    peak = -float(result.fun)

    def drop_at(z: np.ndarray) -> tuple[np.ndarray, float]:
        theta = mode + rotation @ z
        return theta, peak + neg_log_post(theta)

    d = mode.size
    extents = []
    for axis in range(d):
        reach = []
        for sign in (-1, 1):
            k = 0
            while k < 50:
                z = np.zeros(d)
                z[axis] = sign * (k + 1) * options.grid_step
                _, drop = drop_at(z)
                if not drop <= options.grid_cutoff:
                    break
                k += 1
            reach.append(k)
        extents.append(range(-reach[0], reach[1] + 1))

    points, log_posts = [], []
    for ks in product(*extents):
        z = np.asarray(ks, dtype=float) * options.grid_step
        theta, drop = drop_at(z)
        if drop <= options.grid_cutoff:
            points.append(theta)
            log_posts.append(peak - drop)
    log_cell = float(d * np.log(options.grid_step) - 0.5 * np.sum(np.log(eigval)))
    log_posts = np.asarray(log_posts)
    return ThetaGrid(
        points=np.asarray(points),
        log_weights=log_posts + log_cell,
        mode=mode,
        curvature=hess,
        log_posteriors=log_posts,
        log_cell_volume=log_cell,
    )


# ---------------------------------------------------------------------------
# The ladder at one hyperparameter value
# ---------------------------------------------------------------------------


def _marginal_arrays(approx: GaussianApprox) -> tuple[np.ndarray, np.ndarray]:
    return approx.mean.copy(), np.sqrt(approx.marginal_variances())


def conditional_ladder(
    model: LatentModel,
    data: Dataset,
    theta,
    strategies: Sequence[str],
    options: Optional[InlaOptions] = None,
) -> dict[str, ConditionalFit | Exception]:
    """Run the ladder up to the highest requested rung; a failed rung fails every rung above it."""
    options = options or InlaOptions()
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    top = max(STRATEGIES.index(s) for s in strategies)
    out: dict[str, ConditionalFit | Exception] = {}

    started = time.perf_counter()
    try:
        approx = laplace_fit(model, data, theta, tol=options.tol, max_iter=options.max_iter)
        mean, sd = _marginal_arrays(approx)
    except (LgmError, ValueError, np.linalg.LinAlgError) as exc:
        return {s: exc for s in STRATEGIES[: top + 1]}
    elapsed = time.perf_counter() - started
    out["gaussian"] = ConditionalFit("gaussian", theta, approx, mean, sd, np.zeros(approx.p), seconds=elapsed)
    if top == 0:
        return out

    try:
        started = time.perf_counter()
        site = taylor_site(model, data, theta, approx.mean)
        problem = CorrectionProblem.build(model, data, approx, site, options.correction_indices, options.gh_nodes)
        mean_corr = vb_mean_correct(problem, max_iter=options.vb_max_iter)
        approx_m = approx.with_mean(mean_corr.corrected_mean)
        elapsed += time.perf_counter() - started
        out["vb-mean"] = ConditionalFit(
            "vb-mean",
            theta,
            approx_m,
            approx_m.mean.copy(),
            sd,
            np.zeros(approx.p),
            objectives={"vb_mean": mean_corr.objective, "vb_mean_at_zero": mean_corr.objective_at_zero},
            traces=mean_corr.trace,
            seconds=elapsed,
        )
    except (LgmError, ValueError, np.linalg.LinAlgError) as exc:
        out.update({s: exc for s in STRATEGIES[1 : top + 1]})
        return out
    if top == 1:
        return out

    try:
        started = time.perf_counter()
        var_corr = vb_var_correct(problem, mean_corr, max_iter=options.vb_max_iter)
        approx_v = var_corr.approx
        mean_v, sd_v = _marginal_arrays(approx_v)
        elapsed += time.perf_counter() - started
        objectives = dict(out["vb-mean"].objectives)
        objectives.update({"vb_var": var_corr.objective, "vb_var_at_zero": var_corr.objective_at_zero})
        out["vb-mean-var"] = ConditionalFit(
            "vb-mean-var",
            theta,
            approx_v,
            mean_v,
            sd_v,
            np.zeros(approx.p),
            objectives=objectives,
            traces=mean_corr.trace + var_corr.trace,
            seconds=elapsed,
        )
    except (LgmError, ValueError, np.linalg.LinAlgError) as exc:
        out.update({s: exc for s in STRATEGIES[2 : top + 1]})
        return out
    if top == 2:
        return out

    try:
        started = time.perf_counter()
        skew_fit = optimize_skewness(
            model,
            data,
            theta,
            approx_v,
            options.skew_indices,
            grid=options.fft_grid,
            path=options.density_path,
            dense_limit=options.dense_limit,
            block_size=options.block_size,
            n_jobs=options.n_jobs,
        )
        elapsed += time.perf_counter() - started
        objectives = dict(out["vb-mean-var"].objectives)
        for comp in skew_fit.components:
            objectives[f"sgc[{comp.index}]"] = comp.objective
            objectives[f"sgc[{comp.index}]_at_zero"] = comp.objective_at_zero
        out["sgc-vb"] = ConditionalFit(
            "sgc-vb",
            theta,
            approx_v,
            mean_v,
            sd_v,
            skew_fit.skewness,
            objectives=objectives,
            traces=out["vb-mean-var"].traces,
            warnings=skew_fit.warnings,
            seconds=elapsed,
        )
    except (LgmError, ValueError, np.linalg.LinAlgError) as exc:
        out["sgc-vb"] = exc
    return out


# ---------------------------------------------------------------------------
# Stage 3
# ---------------------------------------------------------------------------


def _mixture_marginal(
    name: str,
    weights: np.ndarray,
    means: np.ndarray,
    sds: np.ndarray,
    skews: np.ndarray,
    options: InlaOptions,
) -> ComponentMarginal:
    lo = float(np.min(means - options.marginal_half_width * sds))
    hi = float(np.max(means + options.marginal_half_width * sds))
    centre, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    x = equispaced(centre, half if half > 0.0 else 1e-12, options.marginal_points)
    density = np.zeros_like(x)
    for w, m, s, g in zip(weights, means, sds, skews):
        density += w * marginal_law(float(m), float(s), float(g)).pdf(x)
    grid = DensityGrid(x, density).normalized()
    mean, sd, skew = grid.moments()
    return ComponentMarginal(name=name, mean=mean, sd=sd, skewness=skew, density=grid)


def _hyper_marginals(model: LatentModel, grid: ThetaGrid, weights: np.ndarray) -> tuple[dict, ...]:
    out = []
    for j, hyper in enumerate(model.hypers):
        values = grid.points[:, j]
        mean = float(weights @ values)
        sd = float(np.sqrt(max(weights @ (values - mean) ** 2, 0.0)))
        natural = np.array([hyper.to_natural(v) for v in values])
        out.append(
            {
                "name": hyper.name,
                "kind": hyper.kind,
                "internal_mean": mean,
                "internal_sd": sd,
                "natural_mean": float(weights @ natural),
            }
        )
    return tuple(out)


def _eta_summaries(model: LatentModel, fits: Sequence[ConditionalFit], weights: np.ndarray) -> tuple[dict, ...]:
    means, second = 0.0, 0.0
    for w, fit in zip(weights, fits):
        m, v = eta_moments(fit.approx, model.design)
        means = means + w * m
        second = second + w * (v + m * m)
    sd = np.sqrt(np.clip(second - means * means, 0.0, None))
    return tuple({"observation": i, "mean": float(means[i]), "sd": float(sd[i])} for i in range(model.n))


def _assemble(
    model: LatentModel,
    data: Dataset,
    grid: ThetaGrid,
    strategy: str,
    results: Sequence[ConditionalFit | Exception],
    options: InlaOptions,
    explore_seconds: float,
) -> FitReport:
    notes: list[str] = []
    started = time.perf_counter()
    ok = [i for i, r in enumerate(results) if isinstance(r, ConditionalFit)]
    for i, r in enumerate(results):
        if not isinstance(r, ConditionalFit):
            _soft_warning(
                f"{strategy}: dropped theta point {grid.points[i].tolist()} ({type(r).__name__}: {r})", notes
            )
    if not ok:
        first = results[0]
        raise LgmError(f"{strategy} failed at every hyperparameter point: {type(first).__name__}: {first}") from (
            first if isinstance(first, BaseException) else None
        )
    fits = [results[i] for i in ok]
    log_w = grid.log_weights[ok]
    weights = np.exp(log_w - logsumexp(log_w))

    names = model.component_names()
    means = np.vstack([f.mean for f in fits])
    sds = np.vstack([f.sd for f in fits])
    skews = np.vstack([f.skewness for f in fits])
    marginals = tuple(
        _mixture_marginal(names[j], weights, means[:, j], sds[:, j], skews[:, j], options) for j in range(model.p)
    )
    for fit in fits:
        notes.extend(fit.warnings)

    lead = fits[int(np.argmax(weights))]
    if model.fixed_theta is not None or model.theta_dim == 0:
        lp = grid.log_posteriors[0]
        lml = float(lp - model.hyperprior(grid.points[0])) if np.isfinite(lp) else None
    else:
        lml = float(logsumexp(grid.log_posteriors[ok] + grid.log_cell_volume))
    eta = _eta_summaries(model, fits, weights) if options.eta_summaries else None
    assembly = time.perf_counter() - started
    conditional = float(sum(f.seconds for f in fits))
    timings = {
        "stage2_explore": explore_seconds,
        "conditional_fits": conditional,
        "stage3_assembly": assembly,
        "total": explore_seconds + conditional + assembly,
    }
    return FitReport(
        strategy=strategy,
        marginals=marginals,
        theta_grid=grid,
        timings=timings,
        objectives=dict(lead.objectives),
        hyper_marginals=_hyper_marginals(model, grid, grid.weights()) if model.fixed_theta is None else (),
        eta_summaries=eta,
        log_marginal_likelihood=lml,
        traces=lead.traces,
        warnings=tuple(dict.fromkeys(notes)),
        skewness_vector=lead.skewness.copy(),
        final_approx=lead.approx,
    )


def _ladders_over_grid(
    model: LatentModel,
    data: Dataset,
    grid: ThetaGrid,
    strategies: Sequence[str],
    options: InlaOptions,
) -> list[dict]:
    def run(theta):
        return conditional_ladder(model, data, theta, strategies, options)

    if options.n_jobs > 1 and len(grid) > 1:
        with ThreadPoolExecutor(max_workers=options.n_jobs) as pool:
            return list(pool.map(run, list(grid.points)))
    return [run(theta) for theta in grid.points]


def latent_marginals(
    model: LatentModel,
    data: Dataset,
    grid: ThetaGrid,
    strategy: str,
    options: Optional[InlaOptions] = None,
) -> FitReport:
    """Mixture over the theta grid of the strategy's conditional marginals."""
    if strategy not in STRATEGIES:
        raise ValueError(f"Unknown strategy {strategy!r}; expected one of {', '.join(STRATEGIES)}")
    options = options or InlaOptions()
    ladders = _ladders_over_grid(model, data, grid, [strategy], options)
    return _assemble(model, data, grid, strategy, [lad[strategy] for lad in ladders], options, 0.0)


def fit_strategies(
    model: LatentModel,
    data: Dataset,
    strategies: Sequence[str],
    options: Optional[InlaOptions] = None,
) -> tuple[dict[str, FitReport], dict[str, str]]:
    """Fit several strategies sharing Stage 2 and the ladder; returns reports and failures."""
    options = options or InlaOptions()
    unknown = [s for s in strategies if s not in STRATEGIES]
    if unknown:
        raise ValueError(f"Unknown strategy {unknown[0]!r}; expected one of {', '.join(STRATEGIES)}")
    started = time.perf_counter()
    grid = explore_theta(model, data, options)
    explore_seconds = time.perf_counter() - started
    step(f"Stage 1/3: {len(grid)} hyperparameter point(s), ladder up to {max(strategies, key=STRATEGIES.index)}")
    ladders = _ladders_over_grid(model, data, grid, strategies, options)

    reports: dict[str, FitReport] = {}
    failures: dict[str, str] = {}
    for strategy in strategies:
        step(f"Stage 3: assembling {STRATEGY_LABELS[strategy]} marginals")
        try:
            reports[strategy] = _assemble(
                model, data, grid, strategy, [lad[strategy] for lad in ladders], options, explore_seconds
            )
        except LgmError as exc:
            failures[strategy] = f"{type(exc).__name__}: {exc}"
    return reports, failures


def fit_inla(
    model: LatentModel,
    data: Dataset,
    strategy: str = "gaussian",
    options: Optional[InlaOptions] = None,
) -> FitReport:
    """Stage 1, Stage 2 and Stage 3 for one strategy."""
    reports, failures = fit_strategies(model, data, [strategy], options)
    if strategy in failures:
        raise LgmError(failures[strategy])
    return reports[strategy]
