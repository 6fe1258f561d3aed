#!/usr/bin/env python3
"""Check that the Python environment can run the LGM ladder.

Reports installed versions against the minimums the package needs, checks the
SciPy special functions the skew-normal code relies on, and factors a small
AR(1) precision with the default sparse backend.
"""

from __future__ import annotations

import argparse
import importlib
import importlib.util
import re
import sys
from dataclasses import dataclass
from importlib import metadata
from typing import Optional


@dataclass(frozen=True)
class Requirement:
    module: str
    package: str
    minimum: Optional[str] = None
    purpose: str = ""


CORE = (
    Requirement("numpy", "numpy", "1.22", "arrays, FFT, Gauss-Hermite nodes"),
    Requirement("scipy", "scipy", "1.9", "sparse algebra, optimizers, distributions"),
    Requirement("pandas", "pandas", "1.4", "tables, CSV output, manifest data"),
)

OPTIONAL = (
    Requirement("sksparse", "scikit-sparse", None, "CHOLMOD factorizations"),
    Requirement("pytest", "pytest", "7.0", "test suite"),
)

# Used by utils.sgc.skew_normal and utils.lgm.likelihoods.
SCIPY_FEATURES = ("scipy.special.ndtri_exp", "scipy.special.log_ndtr", "scipy.special.log_expit")


@dataclass(frozen=True)
class CheckRow:
    requirement: Requirement
    version: Optional[str]

    @property
    def installed(self) -> bool:
        return self.version is not None

    @property
    def too_old(self) -> bool:
        minimum = self.requirement.minimum
        if not self.installed or minimum is None or self.version == "unknown":
            return False
        return version_tuple(self.version) < version_tuple(minimum)

    @property
    def ok(self) -> bool:
        return self.installed and not self.too_old


def version_tuple(version: str) -> tuple[int, ...]:
    """Leading numeric release of a version string, e.g. '1.11.0rc1' -> (1, 11, 0)."""
    parts = []
    for token in version.split(".")[:3]:
        match = re.match(r"\d+", token)
        if match is None:
            break
        parts.append(int(match.group()))
    return tuple(parts)


def _installed_version(requirement: Requirement) -> Optional[str]:
    if importlib.util.find_spec(requirement.module) is None:
        return None
    try:
        return metadata.version(requirement.package)
    except metadata.PackageNotFoundError:
        return "unknown"


def check_group(title: str, requirements: tuple[Requirement, ...]) -> list[CheckRow]:
    rows = [CheckRow(req, _installed_version(req)) for req in requirements]
    print(f"\n{title}:")
    for row in rows:
        if not row.installed:
            status = "MISSING"
        elif row.too_old:
            status = "OLD"
        else:
            status = "OK"
        wanted = f">= {row.requirement.minimum}" if row.requirement.minimum else ""
        print(f"  {status:8} {row.requirement.package:16} {row.version or '-':12} {wanted:10} {row.requirement.purpose}")
    return rows


def missing_features(names: tuple[str, ...] = SCIPY_FEATURES) -> list[str]:
    missing = []
    for name in names:
        module_name, attr = name.rsplit(".", 1)
        try:
            module = importlib.import_module(module_name)
        except ImportError:
            missing.append(name)
            continue
        if not hasattr(module, attr):
            missing.append(name)
    return missing


def sparse_backend_smoke() -> str:
    """Factor a 50x50 AR(1) precision; returns the backend that did it."""
    from utils.lgm.model import Ar1Effect, prior_precision
    from utils.lgm.sparse_linalg import cholesky_factor

    q = prior_precision([Ar1Effect("smoke", 50, rho=0.5)], [])
    factor = cholesky_factor(q)
    return factor.backend


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(description="Check dependencies for the LGM ladder.")
    parser.add_argument(
        "--require-optional",
        action="store_true",
        help="Return exit code 2 when optional packages are missing (default: off).",
    )
    args = parser.parse_args(argv)

    print("LGM ladder environment check")
    print(f"Python: {sys.version.split()[0]}")

    core_rows = check_group("Core dependencies", CORE)
    optional_rows = check_group("Optional dependencies", OPTIONAL)
    bad_core = [row for row in core_rows if not row.ok]
    missing_optional = [row for row in optional_rows if not row.ok]

    features = [] if bad_core else missing_features()
    backend = None
    if not bad_core and not features:
        try:
            backend = sparse_backend_smoke()
        except Exception as exc:  # noqa: BLE001
            print(f"\nSparse factorization failed: {exc}")

    print("\nSummary:")
    if bad_core:
        print("  Core packages missing or too old:")
        for row in bad_core:
            print(f"  - {row.requirement.package} (need >= {row.requirement.minimum}, have {row.version or 'none'})")
    else:
        print("  All core packages are installed.")
    for name in features:
        print(f"  - SciPy lacks {name}; upgrade scipy.")
    if backend is not None:
        print(f"  Sparse Cholesky backend: {backend}")
    if missing_optional:
        print("  Missing optional packages:")
        for row in missing_optional:
            print(f"  - {row.requirement.package}")
        if any(row.requirement.module == "sksparse" for row in missing_optional):
            print("  Sparse factorizations fall back to SuperLU without scikit-sparse.")
    else:
        print("  All optional packages are installed.")

    if bad_core or features or backend is None:
        return 1
    if args.require_optional and missing_optional:
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
