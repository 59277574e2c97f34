"""Epsilon-lattice arithmetic, grid functions and the unfolding operator.

Functions defined on the unit square are stored either at the nodes of a
structured grid (bilinear pieces) or directly at the 2x2 Gauss points of
every grid element.  The unfolding operator re-samples the nodal blocks of
each lattice cell onto the cell-local micro grid; because both sides of the
resulting identities integrate the same value multiset with the same
weights, the integral and norm identities hold to machine precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

# 2-point Gauss rule on [0, 1]
GAUSS_1D = np.array([0.5 - np.sqrt(3.0) / 6.0, 0.5 + np.sqrt(3.0) / 6.0])

_FLOOR_SNAP = 1e-12


class LatticeError(ValueError):
    """Raised for grids that are not aligned with the epsilon lattice."""


def _snapped_floor(t: np.ndarray) -> np.ndarray:
    # snap values that sit a hair below an integer onto it, so that lattice
    # points x = k*eps decompose with fractional part 0 instead of 1 - 1e-16
    return np.floor(t + _FLOOR_SNAP)


def lattice_decompose(eps: float, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split points into cell anchor and fractional part, x = [x] + eps*{x}."""
    if eps <= 0:
        raise LatticeError(f"eps must be positive, got {eps}")
    x = np.asarray(x, dtype=float)
    idx = _snapped_floor(x / eps)
    anchor = eps * idx
    frac = x / eps - idx
    return anchor, np.clip(frac, 0.0, None)


def inv_eps_int(eps: float) -> int:
    """1/eps as an integer; raises if eps is not the reciprocal of one."""
    m = 1.0 / eps
    if abs(m - round(m)) > 1e-9:
        raise LatticeError(f"1/eps must be an integer (exact tiling), got eps={eps}")
    return int(round(m))


@dataclass(frozen=True)
class CellIndexSet:
    """Complete epsilon-cells inside a rectangle, plus the leftover measure."""

    eps: float
    indices: np.ndarray        # (K, 2) integer lattice indices k/eps
    leftover_measure: float    # |rectangle| - K * eps^2

    @property
    def count(self) -> int:
        return self.indices.shape[0]

    def anchors(self) -> np.ndarray:
        return self.eps * self.indices.astype(float)


def cell_index_set(eps: float, rect=((0.0, 1.0), (0.0, 1.0))) -> CellIndexSet:
    """All cells k + eps*Y contained in the closed rectangle."""
    (ax, bx), (ay, by) = rect
    tol = 1e-12
    ix0 = int(np.ceil(ax / eps - tol))
    ix1 = int(np.floor(bx / eps + tol))
    iy0 = int(np.ceil(ay / eps - tol))
    iy1 = int(np.floor(by / eps + tol))
    nx = max(ix1 - ix0, 0)
    ny = max(iy1 - iy0, 0)
    ii, jj = np.meshgrid(np.arange(ix0, ix0 + nx), np.arange(iy0, iy0 + ny), indexing="ij")
    indices = np.stack([ii.ravel(), jj.ravel()], axis=1)
    area = (bx - ax) * (by - ay)
    return CellIndexSet(eps=eps, indices=indices, leftover_measure=area - nx * ny * eps * eps)


def _gauss_points_1d(n: int) -> np.ndarray:
    """All 2n Gauss abscissae of an n-element uniform grid on [0, 1]."""
    h = 1.0 / n
    offs = h * GAUSS_1D
    return (np.arange(n)[:, None] * h + offs[None, :]).reshape(-1)


@dataclass
class GridFunction:
    """Scalar field on the structured unit-square grid.

    values has shape (n+1, n+1) for kind 'nodal' (index [ix, iy]) or
    (n, n, 2, 2) for kind 'quad' (per-element Gauss samples).  mask flags
    active elements; inactive ones carry the extension by zero.
    """

    resolution: int
    values: np.ndarray
    kind: str = "nodal"
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        n = self.resolution
        self.values = np.asarray(self.values, dtype=float)
        if self.kind == "nodal":
            if self.values.shape != (n + 1, n + 1):
                raise LatticeError(f"nodal values must have shape {(n+1, n+1)}")
        elif self.kind == "quad":
            if self.values.shape != (n, n, 2, 2):
                raise LatticeError(f"quad values must have shape {(n, n, 2, 2)}")
        else:
            raise LatticeError(f"unknown grid-function kind {self.kind!r}")
        if not np.all(np.isfinite(self.values)):
            raise LatticeError("grid-function values must be finite")
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != (n, n):
                raise LatticeError(f"mask must have shape {(n, n)}")

    @classmethod
    def from_expression(cls, resolution: int, fn: Callable[[np.ndarray], np.ndarray],
                        kind: str = "nodal", mask: Optional[np.ndarray] = None) -> "GridFunction":
        n = resolution
        if kind == "nodal":
            t = np.linspace(0.0, 1.0, n + 1)
            xx, yy = np.meshgrid(t, t, indexing="ij")
            vals = np.asarray(fn(np.stack([xx, yy], axis=-1)), dtype=float)
        else:
            g = _gauss_points_1d(n)
            xx, yy = np.meshgrid(g, g, indexing="ij")
            pts = np.stack([xx, yy], axis=-1).reshape(n, 2, n, 2, 2).transpose(0, 2, 1, 3, 4)
            vals = np.asarray(fn(pts), dtype=float)
        out = cls(resolution=n, values=vals, kind=kind, mask=mask)
        if mask is not None:
            out = out.zero_masked()
        return out

    def zero_masked(self) -> "GridFunction":
        """Zero out values on inactive elements (the tilde extension)."""
        if self.mask is None:
            return self
        vals = self.values.copy()
        if self.kind == "quad":
            vals[~self.mask] = 0.0
        else:
            touched = np.zeros((self.resolution + 1, self.resolution + 1), dtype=bool)
            act = self.mask
            touched[:-1, :-1] |= act
            touched[1:, :-1] |= act
            touched[:-1, 1:] |= act
            touched[1:, 1:] |= act
            vals[~touched] = 0.0
        return GridFunction(self.resolution, vals, self.kind, self.mask)

    def quad_values(self) -> np.ndarray:
        """Values at the element Gauss points, shape (n, n, 2, 2)."""
        if self.kind == "quad":
            return self.values
        v = self.values
        g = GAUSS_1D
        # bilinear interpolation of the four corner values of every element
        v00 = v[:-1, :-1][..., None, None]
        v10 = v[1:, :-1][..., None, None]
        v01 = v[:-1, 1:][..., None, None]
        v11 = v[1:, 1:][..., None, None]
        gx = g[None, None, :, None]
        gy = g[None, None, None, :]
        return (v00 * (1 - gx) * (1 - gy) + v10 * gx * (1 - gy)
                + v01 * (1 - gx) * gy + v11 * gx * gy)

    def _weights(self) -> float:
        return (1.0 / self.resolution) ** 2 / 4.0

    def _masked_quad(self) -> np.ndarray:
        q = self.quad_values()
        if self.mask is not None:
            q = np.where(self.mask[..., None, None], q, 0.0)
        return q

    def integral(self) -> float:
        return float(self._weights() * self._masked_quad().sum())

    def norm(self, p=2) -> float:
        q = self._masked_quad()
        if p == np.inf or p == "inf":
            return float(np.abs(q).max())
        if p == 1:
            return float(self._weights() * np.abs(q).sum())
        if p == 2:
            return float(np.sqrt(self._weights() * (q * q).sum()))
        raise LatticeError(f"p-norm restricted to {{1, 2, inf}}, got {p}")


@dataclass
class UnfoldedFunction:
    """Unfolded field on Omega x Y: one micro nodal block per lattice cell."""

    eps: float
    resolution: int                   # macro grid resolution n
    values: np.ndarray                # (m, m, nc+1, nc+1), m = 1/eps, nc = n*eps
    micro_mask: Optional[np.ndarray]  # (m, m, nc, nc) or None

    @property
    def cells_per_side(self) -> int:
        return self.values.shape[0]

    @property
    def micro_resolution(self) -> int:
        return self.values.shape[2] - 1

    def quad_values(self) -> np.ndarray:
        """Per-cell micro Gauss values, shape (m, m, nc, nc, 2, 2)."""
        v = self.values
        g = GAUSS_1D
        v00 = v[:, :, :-1, :-1][..., None, None]
        v10 = v[:, :, 1:, :-1][..., None, None]
        v01 = v[:, :, :-1, 1:][..., None, None]
        v11 = v[:, :, 1:, 1:][..., None, None]
        gx = g[None, None, None, None, :, None]
        gy = g[None, None, None, None, None, :]
        q = (v00 * (1 - gx) * (1 - gy) + v10 * gx * (1 - gy)
             + v01 * (1 - gx) * gy + v11 * gx * gy)
        if self.micro_mask is not None:
            q = np.where(self.micro_mask[..., None, None], q, 0.0)
        return q

    def _weights(self) -> float:
        # cell measure eps^2 times micro quadrature weight (1/nc)^2 / 4
        nc = self.micro_resolution
        return self.eps ** 2 * (1.0 / nc) ** 2 / 4.0

    def integral(self) -> float:
        return float(self._weights() * self.quad_values().sum())

    def norm(self, p=2) -> float:
        q = self.quad_values()
        if p == np.inf or p == "inf":
            return float(np.abs(q).max())
        if p == 1:
            return float(self._weights() * np.abs(q).sum())
        if p == 2:
            return float(np.sqrt(self._weights() * (q * q).sum()))
        raise LatticeError(f"p-norm restricted to {{1, 2, inf}}, got {p}")


def unfold(eps: float, u: GridFunction) -> UnfoldedFunction:
    """Unfolding operator on grid functions (exact tiling of the unit square)."""
    if u.kind != "nodal":
        raise LatticeError("unfold operates on the nodal representation")
    m = inv_eps_int(eps)
    n = u.resolution
    if n % m != 0:
        raise LatticeError(f"misaligned grid: resolution {n} not a multiple of 1/eps = {m}")
    nc = n // m
    vals = u.values
    blocks = np.empty((m, m, nc + 1, nc + 1))
    for i in range(m):
        for j in range(m):
            blocks[i, j] = vals[i * nc:(i + 1) * nc + 1, j * nc:(j + 1) * nc + 1]
    micro_mask = None
    if u.mask is not None:
        micro_mask = (u.mask.reshape(m, nc, m, nc).transpose(0, 2, 1, 3)).copy()
    return UnfoldedFunction(eps=eps, resolution=n, values=blocks, micro_mask=micro_mask)


def unfold_isometry_check(eps: float, u: GridFunction, p=2) -> float:
    """Relative defect of the unfolding norm identity for one grid function."""
    tu = unfold(eps, u)
    nu = u.norm(p)
    ntu = tu.norm(p)
    return abs(ntu - nu) / max(nu, 1e-300)


def unfold_integral_check(eps: float, u: GridFunction) -> float:
    """Relative defect of the unfolding integral identity."""
    tu = unfold(eps, u)
    iu = u.integral()
    itu = tu.integral()
    return abs(itu - iu) / max(abs(iu), 1e-300)


# ---------------------------------------------------------------------------
# separable test functions and two-scale estimators
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SeparableTest:
    """Product test function phi(x, y) = macro(x) * micro(y), Y-periodic in y."""

    name: str
    macro: Callable[[np.ndarray], np.ndarray]
    micro: Callable[[np.ndarray], np.ndarray]

    def __call__(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return self.macro(x) * self.micro(y)


def _one(p):
    return np.ones(p.shape[:-1])


MACRO_FACTORS = (
    ("1", _one),
    ("x1", lambda p: p[..., 0]),
    ("cos_pi_x1", lambda p: np.cos(np.pi * p[..., 0])),
)

MICRO_FACTORS = (
    ("1", _one),
    ("sin_2pi_y1", lambda p: np.sin(2 * np.pi * p[..., 0])),
    ("sin_2pi_y2", lambda p: np.sin(2 * np.pi * p[..., 1])),
    ("cos_2pi_y1", lambda p: np.cos(2 * np.pi * p[..., 0])),
)

#: fixed battery of 12 separable expressions used by the convergence checks
TEST_BATTERY = tuple(
    SeparableTest(name=f"{mn}*{yn}", macro=mf, micro=yf)
    for mn, mf in MACRO_FACTORS
    for yn, yf in MICRO_FACTORS
)


def _macro_gauss_grid(n: int) -> np.ndarray:
    g = _gauss_points_1d(n)
    xx, yy = np.meshgrid(g, g, indexing="ij")
    pts = np.stack([xx, yy], axis=-1)
    return pts.reshape(n, 2, n, 2, 2).transpose(0, 2, 1, 3, 4)  # (n, n, 2, 2, 2)


def two_scale_pairing(eps: float, u: GridFunction,
                      phi: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> float:
    """Quadrature of integral u(x) * phi(x, x/eps) dx over the unit square."""
    n = u.resolution
    pts = _macro_gauss_grid(n)
    _, frac = lattice_decompose(eps, pts)
    pv = np.asarray(phi(pts, frac), dtype=float)
    return float(u._weights() * (u._masked_quad() * pv).sum())


def two_scale_error(eps: float, u: GridFunction,
                    u0: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> float:
    """L2(Omega x Y) distance between the unfolded field and a limit u0(x, y).

    The x-integral uses the 2x2 Gauss rule per lattice cell so that the
    within-cell variation of u0 is resolved; the y-integral shares the
    micro grid of the unfolded function.
    """
    tu = unfold(eps, u)
    m = tu.cells_per_side
    nc = tu.micro_resolution
    tq = tu.quad_values()                      # (m, m, nc, nc, 2, 2)
    g = GAUSS_1D
    yg = _gauss_points_1d(nc)
    yy1, yy2 = np.meshgrid(yg, yg, indexing="ij")
    ypts = np.stack([yy1, yy2], axis=-1).reshape(nc, 2, nc, 2, 2).transpose(0, 2, 1, 3, 4)
    anchors = np.arange(m) * eps
    err2 = 0.0
    wy = (1.0 / nc) ** 2 / 4.0
    wx = eps ** 2 / 4.0
    for gi in range(2):
        for gj in range(2):
            ax = anchors + eps * g[gi]
            ay = anchors + eps * g[gj]
            xx, yy = np.meshgrid(ax, ay, indexing="ij")
            xpts = np.stack([xx, yy], axis=-1)         # (m, m, 2)
            xb = xpts[:, :, None, None, None, None, :]
            yb = ypts[None, None, ...]
            vals0 = np.asarray(u0(np.broadcast_to(xb, (m, m) + ypts.shape[:-1] + (2,)),
                                  np.broadcast_to(yb, (m, m) + ypts.shape[:-1] + (2,))),
                               dtype=float)
            if tu.micro_mask is not None:
                vals0 = np.where(tu.micro_mask[..., None, None], vals0, 0.0)
            diff = tq - vals0
            err2 += wx * wy * (diff * diff).sum()
    return float(np.sqrt(err2))
