"""Equispaced univariate density grids and their trapezoid moments."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid


@dataclass(frozen=True)
class DensityGrid:
    """Density values on an equispaced grid of abscissae.

    Parameters
    ----------
    x
        Increasing, equispaced abscissae.
    density
        Nonnegative density values at ``x``.
    """

    x: np.ndarray
    density: np.ndarray

    def __post_init__(self) -> None:
        x = np.asarray(self.x, dtype=float)
        d = np.asarray(self.density, dtype=float)
        if x.ndim != 1 or d.shape != x.shape:
            raise ValueError(
                f"DensityGrid expects matching 1-D arrays, got {x.shape} and {d.shape}."
            )
        if x.size < 2:
            raise ValueError("DensityGrid needs at least two abscissae.")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "density", d)

    @property
    def spacing(self) -> float:
        return float(self.x[1] - self.x[0])

    def integral(self) -> float:
        return float(trapezoid(self.density, self.x))

    def normalized(self) -> "DensityGrid":
        d = np.clip(self.density, 0.0, None)
        mass = float(trapezoid(d, self.x))
        if not np.isfinite(mass) or mass <= 0.0:
            raise ValueError("Cannot normalize a density grid with zero or non-finite mass.")
        return DensityGrid(self.x, d / mass)

    def mean(self) -> float:
        return float(trapezoid(self.x * self.density, self.x) / self.integral())

    def moments(self) -> tuple[float, float, float]:
        """Mean, standard deviation and standardized skewness by the trapezoid rule."""
        mass = self.integral()
        mean = float(trapezoid(self.x * self.density, self.x) / mass)
        centred = self.x - mean
        var = float(trapezoid(centred**2 * self.density, self.x) / mass)
        third = float(trapezoid(centred**3 * self.density, self.x) / mass)
        sd = float(np.sqrt(max(var, 0.0)))
        skew = third / sd**3 if sd > 0.0 else 0.0
        return mean, sd, skew

    def interpolate(self, x: np.ndarray) -> np.ndarray:
        return np.interp(np.asarray(x, dtype=float), self.x, self.density, left=0.0, right=0.0)

    def to_frame_rows(self, label) -> list[dict]:
        return [
            {"component": label, "abscissa": float(a), "density": float(v)}
            for a, v in zip(self.x, self.density)
        ]


def equispaced(center: float, half_width: float, points: int) -> np.ndarray:
    if points < 2:
        raise ValueError("points must be >= 2")
    if not half_width > 0.0:
        raise ValueError(f"half_width must be positive, got {half_width}")
    return np.linspace(center - half_width, center + half_width, points)
