"""Closed-form coefficient and source expressions used in configurations.

The grammar is a fixed set of named polynomial/trigonometric forms so that
coefficients, their two-scale limits and all derived quantities can be
evaluated analytically at quadrature points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ExpressionError(ValueError):
    """Raised for unknown kinds or non-coercive coefficient data."""


@dataclass(frozen=True)
class CoefficientField:
    """Symmetric 2x2 diffusion tensor A(x, y), Y-periodic in y.

    kinds: 'identity', 'sinusoidal' (isotropic 1 + a sin(2 pi y1)),
    'laminate' (diag(base + a sin(2 pi y1), base)) and 'checkerboard'
    (isotropic base + a sin(2 pi y1) sin(2 pi y2)).  An optional factor
    (1 + x_scale * x1) adds explicit macroscopic dependence.
    """

    kind: str = "identity"
    base: float = 1.0
    amplitude: float = 0.0
    x_scale: float = 0.0

    def __post_init__(self):
        if self.kind not in ("identity", "sinusoidal", "laminate", "checkerboard"):
            raise ExpressionError(f"unknown coefficient kind {self.kind!r}")
        if abs(self.x_scale) >= 1.0:
            raise ExpressionError("x modulation must keep the coefficient positive")
        if self.coercivity() <= 0.0:
            raise ExpressionError("coefficient is not uniformly coercive")

    @property
    def x_dependent(self) -> bool:
        return self.x_scale != 0.0

    def eval(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        shape = np.broadcast_shapes(x.shape[:-1], y.shape[:-1])
        out = np.zeros(shape + (2, 2))
        if self.kind == "identity":
            out[..., 0, 0] = self.base
            out[..., 1, 1] = self.base
        elif self.kind == "sinusoidal":
            v = self.base + self.amplitude * np.sin(2 * np.pi * y[..., 0])
            out[..., 0, 0] = v
            out[..., 1, 1] = v
        elif self.kind == "laminate":
            out[..., 0, 0] = self.base + self.amplitude * np.sin(2 * np.pi * y[..., 0])
            out[..., 1, 1] = self.base
        else:
            v = self.base + self.amplitude * (np.sin(2 * np.pi * y[..., 0])
                                              * np.sin(2 * np.pi * y[..., 1]))
            out[..., 0, 0] = v
            out[..., 1, 1] = v
        if self.x_dependent:
            out = out * (1.0 + self.x_scale * x[..., 0])[..., None, None]
        return out

    def coercivity(self) -> float:
        """Uniform lower eigenvalue bound alpha."""
        lo = self.base - abs(self.amplitude) if self.kind != "identity" else self.base
        lo = min(lo, self.base)
        mod = min(1.0, 1.0 + self.x_scale)
        return lo * mod

    def bound(self) -> float:
        """Uniform upper bound on the spectral norm."""
        hi = self.base + abs(self.amplitude)
        mod = max(1.0, 1.0 + self.x_scale)
        return hi * mod


@dataclass(frozen=True)
class SourceField:
    """Macroscopic source f(x): 'zero', 'one' or 'cosine' modes."""

    kind: str = "cosine"
    scale: float = 1.0
    kx: int = 1
    ky: int = 1

    def __post_init__(self):
        if self.kind not in ("zero", "one", "cosine"):
            raise ExpressionError(f"unknown source kind {self.kind!r}")

    def eval(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "zero":
            return np.zeros(x.shape[:-1])
        if self.kind == "one":
            return np.full(x.shape[:-1], self.scale)
        return self.scale * (np.cos(np.pi * self.kx * x[..., 0])
                             * np.cos(np.pi * self.ky * x[..., 1]))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.eval(x)
