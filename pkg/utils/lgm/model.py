"""Latent Gaussian model containers, prior precision builders and validation."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy import sparse
from scipy.special import gammaln

from ..errors import CholeskyFailure
from .likelihoods import LikelihoodFamily, family_from_dict, family_to_dict
from .sparse_linalg import cholesky_factor

SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# Hyperparameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HyperParameter:
    """One hyperparameter on its internal (unconstrained) scale.

    ``kind`` is ``"log_precision"`` (precision = exp(theta)) or
    ``"ar1_correlation"`` (rho = 2 exp(theta) / (1 + exp(theta)) - 1).
    ``prior`` is ``"loggamma"`` with ``params = (shape, rate)`` on the
    precision, or ``"normal"`` with ``params = (mean, sd)`` on theta itself.
    """

    name: str
    kind: str = "log_precision"
    prior: str = "loggamma"
    params: tuple[float, float] = (1.0, 5e-5)
    initial: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("log_precision", "ar1_correlation"):
            raise ValueError(f"Unsupported hyperparameter kind: {self.kind}")
        if self.prior not in ("loggamma", "normal"):
            raise ValueError(f"Unsupported hyperprior: {self.prior}")
        a, b = self.params
        if not b > 0.0 or (self.prior == "loggamma" and not a > 0.0):
            raise ValueError(f"Invalid {self.prior} hyperprior parameters: {self.params}")

    def log_density(self, value: float) -> float:
        a, b = self.params
        if self.prior == "loggamma":
            return float(a * np.log(b) - gammaln(a) + a * value - b * np.exp(value))
        z = (value - a) / b
        return float(-0.5 * z * z - np.log(b) - 0.5 * np.log(2.0 * np.pi))

    def to_natural(self, value: float) -> float:
        if self.kind == "log_precision":
            return float(np.exp(value))
        return float(np.tanh(0.5 * value))


def ar1_rho_from_theta(value: float) -> float:
    return float(np.tanh(0.5 * value))


# ---------------------------------------------------------------------------
# Prior blocks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FixedEffects:
    names: tuple[str, ...]
    precision: float = 0.001

    @property
    def size(self) -> int:
        return len(self.names)

    @property
    def label(self) -> str:
        return "fixed"

    def component_names(self) -> list[str]:
        return list(self.names)

    def precision_matrix(self, theta: np.ndarray) -> sparse.csc_matrix:
        if not self.precision > 0.0:
            raise ValueError(f"Fixed-effect precision must be > 0, got {self.precision}")
        return sparse.identity(self.size, format="csc") * float(self.precision)


@dataclass(frozen=True)
class IidEffect:
    name: str
    size: int
    precision: float = 1.0
    log_precision_index: Optional[int] = None

    @property
    def label(self) -> str:
        return "iid"

    def component_names(self) -> list[str]:
        return [f"{self.name}[{i}]" for i in range(self.size)]

    def precision_matrix(self, theta: np.ndarray) -> sparse.csc_matrix:
        tau = _block_precision(theta, self.log_precision_index, self.precision, self.name)
        return sparse.identity(self.size, format="csc") * tau


@dataclass(frozen=True)
class Ar1Effect:
    """Stationary first-order autoregression u_i | u_{i-1} ~ N(rho u_{i-1}, 1 / tau)."""

    name: str
    size: int
    rho: float = 0.0
    rho_index: Optional[int] = None
    precision: float = 1.0
    log_precision_index: Optional[int] = None

    @property
    def label(self) -> str:
        return "ar1"

    def component_names(self) -> list[str]:
        return [f"{self.name}[{i}]" for i in range(self.size)]

    def correlation(self, theta: np.ndarray) -> float:
        if self.rho_index is None:
            return float(self.rho)
        return ar1_rho_from_theta(float(np.atleast_1d(theta)[self.rho_index]))

    def precision_matrix(self, theta: np.ndarray) -> sparse.csc_matrix:
        rho = self.correlation(theta)
        if not abs(rho) < 1.0:
            raise ValueError(f"AR1 block '{self.name}' needs |rho| < 1, got {rho}")
        tau = _block_precision(theta, self.log_precision_index, self.precision, self.name)
        n = self.size
        if n == 1:
            return sparse.csc_matrix(np.array([[tau * (1.0 - rho * rho)]]))
        main = np.full(n, 1.0 + rho * rho)
        main[0] = main[-1] = 1.0
        off = np.full(n - 1, -rho)
        return (tau * sparse.diags([off, main, off], [-1, 0, 1])).tocsc()


PriorBlock = Union[FixedEffects, IidEffect, Ar1Effect]


def _block_precision(theta, index: Optional[int], fixed: float, name: str) -> float:
    if index is None:
        tau = float(fixed)
    else:
        tau = float(np.exp(np.atleast_1d(theta)[index]))
    if not tau > 0.0:
        raise ValueError(f"Block '{name}' precision must be > 0, got {tau}")
    return tau


def prior_precision(blocks: Sequence[PriorBlock], theta) -> sparse.csc_matrix:
    """Block-diagonal sparse prior precision Q_theta for the latent field."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if not blocks:
        raise ValueError("At least one prior block is required.")
    mats = [block.precision_matrix(theta) for block in blocks]
    q = sparse.block_diag(mats, format="csc")
    # exact symmetry
    return ((q + q.T) * 0.5).tocsc()


def linear_predictor(design: sparse.spmatrix, f) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.ndim != 1 or design.shape[1] != f.shape[0]:
        raise ValueError(
            f"Dimension mismatch: design has {design.shape[1]} columns, latent vector has shape {f.shape}."
        )
    return np.asarray(design @ f, dtype=float).ravel()


# ---------------------------------------------------------------------------
# Model and data containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Dataset:
    y: np.ndarray
    covariates: Optional[pd.DataFrame] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float).ravel())

    @property
    def n(self) -> int:
        return int(self.y.size)


@dataclass(frozen=True)
class LatentModel:
    design: sparse.csr_matrix
    blocks: tuple[PriorBlock, ...]
    likelihood: LikelihoodFamily
    hypers: tuple[HyperParameter, ...] = ()
    fixed_theta: Optional[tuple[float, ...]] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "design", sparse.csr_matrix(self.design, dtype=float))
        object.__setattr__(self, "blocks", tuple(self.blocks))
        object.__setattr__(self, "hypers", tuple(self.hypers))
        if self.fixed_theta is not None:
            object.__setattr__(self, "fixed_theta", tuple(float(v) for v in self.fixed_theta))

    @property
    def n(self) -> int:
        return int(self.design.shape[0])

    @property
    def p(self) -> int:
        return int(self.design.shape[1])

    @property
    def theta_dim(self) -> int:
        return len(self.hypers)

    def initial_theta(self) -> np.ndarray:
        if self.fixed_theta is not None:
            return np.asarray(self.fixed_theta, dtype=float)
        return np.asarray([h.initial for h in self.hypers], dtype=float)

    def hyperprior(self, theta) -> float:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        return float(sum(h.log_density(v) for h, v in zip(self.hypers, theta)))

    def prior_precision(self, theta) -> sparse.csc_matrix:
        return prior_precision(self.blocks, theta)

    def block_slices(self) -> list[slice]:
        slices = []
        start = 0
        for block in self.blocks:
            slices.append(slice(start, start + block.size))
            start += block.size
        return slices

    def fixed_effect_indices(self) -> list[int]:
        out: list[int] = []
        for block, sl in zip(self.blocks, self.block_slices()):
            if isinstance(block, FixedEffects):
                out.extend(range(sl.start, sl.stop))
        return out

    def default_correction_indices(self) -> list[int]:
        out = []
        for block, sl in zip(self.blocks, self.block_slices()):
            if isinstance(block, FixedEffects):
                out.extend(range(sl.start, sl.stop))
            elif block.size > 0:
                out.append(sl.start)
        return out

    def component_names(self) -> list[str]:
        names: list[str] = []
        for block in self.blocks:
            names.extend(block.component_names())
        return names

    def with_fixed_theta(self, theta) -> "LatentModel":
        value = None if theta is None else tuple(np.atleast_1d(theta).astype(float))
        return replace(self, fixed_theta=value)

    def permuted(self, perm: Sequence[int]) -> "LatentModel":
        """Same model with latent columns reordered; prior blocks become a generic permuted block."""
        perm = np.asarray(perm, dtype=int)
        return replace(
            self,
            design=self.design[:, perm],
            blocks=(PermutedBlocks(self.blocks, tuple(int(i) for i in perm)),),
        )


@dataclass(frozen=True)
class PermutedBlocks:
    """A list of prior blocks viewed through a permutation of the latent indices."""

    inner: tuple[PriorBlock, ...]
    perm: tuple[int, ...]

    @property
    def size(self) -> int:
        return len(self.perm)

    @property
    def label(self) -> str:
        return "permuted"

    def component_names(self) -> list[str]:
        names = []
        for block in self.inner:
            names.extend(block.component_names())
        return [names[i] for i in self.perm]

    def precision_matrix(self, theta: np.ndarray) -> sparse.csc_matrix:
        q = prior_precision(self.inner, theta)
        idx = np.asarray(self.perm)
        return q[idx][:, idx].tocsc()


# ---------------------------------------------------------------------------
# Design assembly
# ---------------------------------------------------------------------------


def assemble_design(
    fixed_columns: np.ndarray,
    random_levels: Optional[np.ndarray] = None,
    n_levels: Optional[int] = None,
) -> sparse.csr_matrix:
    """[X | Z] with Z the 0/1 incidence matrix of observation -> random-effect level."""
    x = np.asarray(fixed_columns, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    parts = [sparse.csr_matrix(x)] if x.size else []
    if random_levels is not None:
        levels = np.asarray(random_levels, dtype=int)
        size = int(n_levels if n_levels is not None else levels.max() + 1)
        if levels.min() < 0 or levels.max() >= size:
            raise ValueError(f"Random-effect levels must lie in [0, {size}).")
        z = sparse.csr_matrix(
            (np.ones(levels.size), (np.arange(levels.size), levels)),
            shape=(levels.size, size),
        )
        parts.append(z)
    if not parts:
        raise ValueError("Design needs at least one column.")
    return sparse.hstack(parts, format="csr")


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ValidationIssue:
    field: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    issues: tuple[ValidationIssue, ...] = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return not self.issues

    def messages(self) -> list[str]:
        return [f"{issue.field}: {issue.message}" for issue in self.issues]


def validate_model(model: LatentModel, data: Dataset) -> ValidationReport:
    """Collect structural problems without raising."""
    issues: list[ValidationIssue] = []
    if model.n < 1 or model.p < 1:
        issues.append(ValidationIssue("design", f"needs n >= 1 and p >= 1, got {model.design.shape}"))
    if data.n != model.n:
        issues.append(
            ValidationIssue("y", f"length {data.n} does not match {model.n} design rows")
        )
    block_total = sum(block.size for block in model.blocks)
    if block_total != model.p:
        issues.append(
            ValidationIssue(
                "blocks", f"prior blocks cover {block_total} columns but design has {model.p}"
            )
        )
    bad = np.atleast_1d(model.likelihood.support_violations(data.y))
    if np.any(bad):
        where = np.flatnonzero(bad)
        issues.append(
            ValidationIssue(
                "y",
                f"{where.size} response(s) outside the {model.likelihood.name} support "
                f"(first at position {int(where[0])}: {float(data.y[where[0]])!r})",
            )
        )

    theta = model.initial_theta()
    if theta.size != model.theta_dim:
        issues.append(
            ValidationIssue("fixed_theta", f"length {theta.size} differs from {model.theta_dim} hyperparameters")
        )
    for index_name in ("log_precision_index", "rho_index"):
        candidates = [model.likelihood, *model.blocks]
        for item in candidates:
            index = getattr(item, index_name, None)
            if index is not None and not 0 <= index < model.theta_dim:
                issues.append(
                    ValidationIssue(index_name, f"hyper-index {index} out of range for {model.theta_dim} hyperparameters")
                )

    if block_total == model.p and theta.size == model.theta_dim:
        try:
            q = model.prior_precision(theta)
            cholesky_factor(q)
        except (ValueError, CholeskyFailure) as exc:
            issues.append(ValidationIssue("prior_precision", f"not positive definite: {exc}"))
    return ValidationReport(tuple(issues))


# ---------------------------------------------------------------------------
# JSON round trip
# ---------------------------------------------------------------------------


def _block_to_dict(block: PriorBlock) -> dict:
    if isinstance(block, FixedEffects):
        return {"type": "fixed", "names": list(block.names), "precision": block.precision}
    if isinstance(block, IidEffect):
        return {
            "type": "iid",
            "name": block.name,
            "size": block.size,
            "precision": block.precision,
            "log_precision_index": block.log_precision_index,
        }
    if isinstance(block, Ar1Effect):
        return {
            "type": "ar1",
            "name": block.name,
            "size": block.size,
            "rho": block.rho,
            "rho_index": block.rho_index,
            "precision": block.precision,
            "log_precision_index": block.log_precision_index,
        }
    raise ValueError(f"Cannot serialize prior block of type {type(block).__name__}")


def _block_from_dict(payload: dict) -> PriorBlock:
    payload = dict(payload)
    kind = payload.pop("type", None)
    if kind == "fixed":
        return FixedEffects(tuple(payload["names"]), float(payload.get("precision", 0.001)))
    if kind == "iid":
        return IidEffect(**payload)
    if kind == "ar1":
        return Ar1Effect(**payload)
    raise ValueError(f"Unknown prior block type: {kind!r}")


def model_to_dict(model: LatentModel, data: Optional[Dataset] = None) -> dict:
    coo = model.design.tocoo()
    payload = {
        "schema_version": SCHEMA_VERSION,
        "design": {
            "shape": [int(model.n), int(model.p)],
            "row": coo.row.tolist(),
            "col": coo.col.tolist(),
            "value": coo.data.tolist(),
        },
        "blocks": [_block_to_dict(block) for block in model.blocks],
        "likelihood": family_to_dict(model.likelihood),
        "hypers": [
            {
                "name": h.name,
                "kind": h.kind,
                "prior": h.prior,
                "params": list(h.params),
                "initial": h.initial,
            }
            for h in model.hypers
        ],
        "fixed_theta": None if model.fixed_theta is None else list(model.fixed_theta),
    }
    if data is not None:
        payload["data"] = {"y": data.y.tolist()}
    return payload


def model_from_dict(payload: dict) -> tuple[LatentModel, Optional[Dataset]]:
    version = payload.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValueError(f"Unsupported schema_version {version!r}; expected {SCHEMA_VERSION}.")
    design = payload["design"]
    a = sparse.csr_matrix(
        (design["value"], (design["row"], design["col"])), shape=tuple(design["shape"])
    )
    model = LatentModel(
        design=a,
        blocks=tuple(_block_from_dict(b) for b in payload["blocks"]),
        likelihood=family_from_dict(payload["likelihood"]),
        hypers=tuple(
            HyperParameter(
                name=h["name"],
                kind=h["kind"],
                prior=h["prior"],
                params=tuple(h["params"]),
                initial=float(h["initial"]),
            )
            for h in payload.get("hypers", [])
        ),
        fixed_theta=payload.get("fixed_theta"),
    )
    data = None
    if "data" in payload:
        data = Dataset(np.asarray(payload["data"]["y"], dtype=float))
    return model, data
