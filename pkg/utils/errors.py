"""Exception types raised by the latent Gaussian model toolkit."""

from __future__ import annotations

from typing import Optional

import numpy as np


class LgmError(RuntimeError):
    """Base class for numerical failures inside the approximation ladder."""


class NonConvergence(LgmError):
    def __init__(self, message: str, iterations: Optional[int] = None):
        super().__init__(message)
        self.iterations = iterations


class IndefiniteSystem(LgmError):
    """The Newton system A'CA + Q is not positive definite at the current point."""


class CholeskyFailure(LgmError, np.linalg.LinAlgError):
    def __init__(self, message: str, index: Optional[int] = None):
        super().__init__(message)
        self.index = index


class ModeSearchFailure(LgmError):
    pass


class GridTooNarrow(LgmError):
    pass


class DenseLimitExceeded(LgmError):
    pass


class OutOfRange(ValueError):
    pass


class LikelihoodDomainError(ValueError):
    pass


class ManifestError(ValueError):
    """Manifest parse or validation error with its position in the file."""

    def __init__(
        self,
        message: str,
        section: Optional[str] = None,
        key: Optional[str] = None,
        line: Optional[int] = None,
    ):
        location = []
        if section:
            location.append(f"[{section}]")
        if key:
            location.append(key)
        if line is not None:
            location.append(f"line {line}")
        prefix = " ".join(location)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.section = section
        self.key = key
        self.line = line
