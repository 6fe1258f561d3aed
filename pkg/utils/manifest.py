"""INI experiment manifests: parsing, validation with line positions, and model construction."""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import pandas as pd

from .errors import ManifestError
from .experiments import EXPERIMENTS, Experiment, build_experiment, custom_hyper_count, model_from_frame
from .inla_pipeline import MAX_GRID_HYPERS, STRATEGIES
from .lgm.likelihoods import FAMILIES
from .lgm.model import Dataset, LatentModel

SECTIONS: dict[str, tuple[str, ...]] = {
    "model": (
        "experiment",
        "likelihood",
        "dof",
        "tail_xi",
        "quantile_level",
        "sensitivity",
        "specificity",
        "trials",
        "obs_precision",
        "fixed_effects",
        "fixed_precision",
        "random_effect",
        "random_precision",
        "ar1_rho",
        "fixed_theta",
        "free_theta",
    ),
    "data": ("path", "response", "n", "seed"),
    "strategies": ("names",),
    "oracle": ("enabled", "iterations", "burn_in", "chains"),
    "output": ("directory",),
}
EXPERIMENT_NAMES = ("custom", *EXPERIMENTS)
_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]")
_KEY_RE = re.compile(r"^\s*([^=:#;\s][^=:]*?)\s*[=:]")


@dataclass(frozen=True)
class ExperimentManifest:
    path: Path
    experiment: str
    n: Optional[int]
    seed: int
    strategies: tuple[str, ...]
    oracle_enabled: bool = True
    oracle_iterations: int = 200_000
    oracle_burn_in: int = 20_000
    oracle_chains: int = 1
    output_dir: Path = Path("out")
    free_theta: bool = False
    model_options: dict = field(default_factory=dict)
    data_path: Optional[Path] = None
    response: str = "y"


def _line_index(text: str) -> dict[tuple[str, Optional[str]], int]:
    index: dict[tuple[str, Optional[str]], int] = {}
    section = None
    for number, line in enumerate(text.splitlines(), start=1):
        match = _SECTION_RE.match(line)
        if match:
            section = match.group(1).strip()
            index.setdefault((section, None), number)
            continue
        match = _KEY_RE.match(line)
        if match and section is not None:
            index.setdefault((section, match.group(1).strip().lower()), number)
    return index


class _Reader:
    def __init__(self, parser: configparser.ConfigParser, lines: dict):
        self.parser = parser
        self.lines = lines

    def fail(self, message: str, section: str, key: Optional[str] = None) -> ManifestError:
        return ManifestError(message, section, key, self.lines.get((section, key)) or self.lines.get((section, None)))

    def get(self, section: str, key: str, default=None) -> Optional[str]:
        if not self.parser.has_option(section, key):
            return default
        return self.parser.get(section, key).strip()

    def number(self, section: str, key: str, kind, default):
        raw = self.get(section, key)
        if raw is None:
            return default
        try:
            return kind(raw)
        except ValueError:
            raise self.fail(f"expected {kind.__name__}, got {raw!r}", section, key) from None

    def flag(self, section: str, key: str, default: bool) -> bool:
        if not self.parser.has_option(section, key):
            return default
        try:
            return self.parser.getboolean(section, key)
        except ValueError:
            raise self.fail(f"expected true/false, got {self.get(section, key)!r}", section, key) from None

    def items(self, section: str, key: str) -> Optional[list[str]]:
        raw = self.get(section, key)
        if raw is None:
            return None
        return [part.strip() for part in raw.split(",") if part.strip()]


def load_manifest(path) -> ExperimentManifest:
    """Parse and validate a manifest file.

    Raises
    ------
    FileNotFoundError
        When the manifest does not exist.
    ManifestError
        For syntax errors, unknown sections or keys, and invalid values.
    """
    path = Path(path).expanduser().resolve()
    if not path.exists():
        raise FileNotFoundError(f"Manifest not found: {path}")
    text = path.read_text(encoding="utf-8")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ManifestError(f"{path.name}: {exc}", line=getattr(exc, "lineno", None)) from exc
    reader = _Reader(parser, _line_index(text))

    for section in parser.sections():
        if section not in SECTIONS:
            raise reader.fail(f"unknown section (expected one of {', '.join(SECTIONS)})", section)
        for key in parser.options(section):
            if key not in SECTIONS[section]:
                raise reader.fail("unknown key", section, key)

    experiment = reader.get("model", "experiment", "custom")
    if experiment not in EXPERIMENT_NAMES:
        raise reader.fail(f"unknown experiment {experiment!r}", "model", "experiment")

    model_options: dict = {}
    likelihood = reader.get("model", "likelihood")
    if experiment == "custom":
        if likelihood is None:
            raise reader.fail("custom experiments need a likelihood", "model")
        if likelihood not in FAMILIES:
            raise reader.fail(
                f"unknown likelihood {likelihood!r} (expected one of {', '.join(FAMILIES)})", "model", "likelihood"
            )
        model_options["likelihood"] = likelihood
    for key, kind in (
        ("dof", float),
        ("tail_xi", float),
        ("quantile_level", float),
        ("sensitivity", float),
        ("specificity", float),
        ("trials", int),
        ("obs_precision", float),
        ("fixed_precision", float),
        ("random_precision", float),
        ("ar1_rho", float),
    ):
        value = reader.number("model", key, kind, None)
        if value is not None:
            model_options[key] = value
    if "ar1_rho" in model_options and not abs(model_options["ar1_rho"]) < 1.0:
        raise reader.fail(f"needs |rho| < 1, got {model_options['ar1_rho']}", "model", "ar1_rho")
    fixed_effects = reader.items("model", "fixed_effects")
    if fixed_effects is not None:
        model_options["fixed_effects"] = tuple(fixed_effects)
    random_effect = reader.get("model", "random_effect")
    if random_effect is not None:
        kind, _, column = random_effect.partition(":")
        if random_effect != "none" and (kind not in ("iid", "ar1") or not column):
            raise reader.fail(
                f"expected none, iid:<column> or ar1:<column>, got {random_effect!r}", "model", "random_effect"
            )
        model_options["random_effect"] = random_effect
    theta_items = reader.items("model", "fixed_theta")
    if theta_items is not None:
        try:
            model_options["fixed_theta"] = tuple(float(v) for v in theta_items)
        except ValueError:
            raise reader.fail(f"expected comma-separated numbers, got {theta_items}", "model", "fixed_theta") from None

    data_path = reader.get("data", "path")
    if experiment == "custom":
        if data_path is None:
            raise reader.fail("custom experiments need a data path", "data")
        resolved = (path.parent / data_path).resolve()
        if not resolved.exists():
            raise reader.fail(f"data file not found: {resolved}", "data", "path")
        data_path = resolved
    n = reader.number("data", "n", int, None)
    if n is not None and n < 1:
        raise reader.fail(f"n must be >= 1, got {n}", "data", "n")
    seed = reader.number("data", "seed", int, None)
    if seed is None:
        raise reader.fail("a seed is required", "data")
    if seed < 0:
        raise reader.fail(f"seed must be >= 0, got {seed}", "data", "seed")

    strategies = tuple(reader.items("strategies", "names") or STRATEGIES)
    for name in strategies:
        if name not in STRATEGIES:
            raise reader.fail(f"unknown strategy {name!r} (expected {', '.join(STRATEGIES)})", "strategies", "names")

    iterations = reader.number("oracle", "iterations", int, 200_000)
    burn_in = reader.number("oracle", "burn_in", int, 20_000)
    chains = reader.number("oracle", "chains", int, 1)
    if iterations <= burn_in:
        raise reader.fail(f"iterations ({iterations}) must exceed burn_in ({burn_in})", "oracle", "iterations")
    if chains < 1:
        raise reader.fail(f"chains must be >= 1, got {chains}", "oracle", "chains")

    free_theta = reader.flag("model", "free_theta", False)
    if experiment == "custom" and free_theta and "fixed_theta" not in model_options:
        count = custom_hyper_count(likelihood, model_options.get("random_effect", "none"))
        if count > MAX_GRID_HYPERS:
            raise reader.fail(
                f"free_theta supports at most {MAX_GRID_HYPERS} hyperparameters, this model has {count}",
                "model",
                "free_theta",
            )

    output = reader.get("output", "directory", "out")
    return ExperimentManifest(
        path=path,
        experiment=experiment,
        n=n,
        seed=seed,
        strategies=strategies,
        oracle_enabled=reader.flag("oracle", "enabled", True),
        oracle_iterations=iterations,
        oracle_burn_in=burn_in,
        oracle_chains=chains,
        output_dir=(path.parent / output).resolve(),
        free_theta=free_theta,
        model_options=model_options,
        data_path=data_path,
        response=reader.get("data", "response", "y"),
    )


def build_manifest_model(manifest: ExperimentManifest) -> Experiment:
    """Simulate the named experiment, or read the custom data table and build its model."""
    if manifest.experiment != "custom":
        return build_experiment(manifest.experiment, n=manifest.n, seed=manifest.seed, free_theta=manifest.free_theta)
    options = dict(manifest.model_options)
    if manifest.free_theta and "fixed_theta" not in options:
        count = custom_hyper_count(options["likelihood"], options.get("random_effect", "none"))
        if count > MAX_GRID_HYPERS:
            raise ManifestError(
                f"free hyperparameters: at most {MAX_GRID_HYPERS} supported, this model has {count}", "model"
            )
    frame = pd.read_csv(manifest.data_path)
    likelihood = options.pop("likelihood")
    model, data = model_from_frame(
        frame,
        response=manifest.response,
        likelihood=likelihood,
        fixed_effects=options.pop("fixed_effects", ("intercept",)),
        fixed_precision=options.pop("fixed_precision", 0.001),
        random_effect=options.pop("random_effect", "none"),
        random_precision=options.pop("random_precision", 1.0),
        ar1_rho=options.pop("ar1_rho", 0.5),
        fixed_theta=options.pop("fixed_theta", None),
        free_theta=manifest.free_theta,
        likelihood_options=options,
    )
    oracle = "quadrature" if model.p <= 2 and (model.fixed_theta is not None or model.theta_dim == 0) else "mcmc"
    return Experiment("custom", model, data, oracle=oracle)


def manifest_model(manifest: ExperimentManifest) -> tuple[LatentModel, Dataset]:
    experiment = build_manifest_model(manifest)
    return experiment.model, experiment.data
