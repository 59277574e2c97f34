"""Perforated reference cell and the locally periodic transformations.

The unit cell Y = [0,1]^2 carries a grid-aligned square hole around the
center.  A porosity value determines the deformed hole half-width through
h(theta) = sqrt(1 - theta)/2, so the deformed material part has area theta
exactly.  The cell map rescales the inf-norm radius around the center with
a C^1 monotone profile: linear inside the reference hole, a cubic Hermite
blend up to the blend radius and the identity beyond, hence displacements
are compactly supported in the cell interior.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .lattice import lattice_decompose, inv_eps_int

CELL_CENTER = np.array([0.5, 0.5])

#: required lower bound on the sampled radial-profile slope
MIN_PROFILE_SLOPE = 0.1

#: safety margin keeping the deformed hole away from the blend radius
HOLE_MARGIN = 0.9


class GeometryError(ValueError):
    """Raised for inadmissible geometric parameters or degenerate maps."""


def operator_norm_2x2(mats: np.ndarray) -> np.ndarray:
    """Spectral norm of a stack of 2x2 matrices (closed form)."""
    a = mats[..., 0, 0]
    b = mats[..., 0, 1]
    c = mats[..., 1, 0]
    d = mats[..., 1, 1]
    q = a * a + b * b + c * c + d * d
    det = a * d - b * c
    disc = np.sqrt(np.maximum(q * q - 4.0 * det * det, 0.0))
    return np.sqrt(np.maximum((q + disc) / 2.0, 0.0))


def invert_2x2(mats: np.ndarray) -> np.ndarray:
    """Inverse of a stack of 2x2 matrices (closed form)."""
    a = mats[..., 0, 0]
    b = mats[..., 0, 1]
    c = mats[..., 1, 0]
    d = mats[..., 1, 1]
    det = a * d - b * c
    out = np.empty_like(mats)
    out[..., 0, 0] = d
    out[..., 0, 1] = -b
    out[..., 1, 0] = -c
    out[..., 1, 1] = a
    return out / det[..., None, None]


@dataclass(frozen=True)
class ReferenceCell:
    """Unit cell with a centered square hole of half-width h* (0 = solid)."""

    hole_halfwidth: float = 0.125
    blend_radius: float = 0.375

    def __post_init__(self):
        h, r = self.hole_halfwidth, self.blend_radius
        if h < 0.0 or h >= 0.375:
            raise GeometryError(f"hole half-width must lie in [0, 3/8), got {h}")
        if h > 0.0 and not (h < r < 0.5):
            raise GeometryError(f"blend radius must lie in (h*, 1/2), got {r}")

    @property
    def has_hole(self) -> bool:
        return self.hole_halfwidth > 0.0

    @property
    def theta_ref(self) -> float:
        """Porosity of the undeformed cell, 1 - (2 h*)^2."""
        return 1.0 - 4.0 * self.hole_halfwidth ** 2

    @property
    def material_fraction(self) -> float:
        return self.theta_ref

    def assert_grid_aligned(self, resolution: int) -> None:
        """Check that hole and blend radius sit on grid lines of the cell mesh."""
        for name, val in (("hole half-width", self.hole_halfwidth),
                          ("blend radius", self.blend_radius),
                          ("cell center", 0.5)):
            scaled = val * resolution
            if abs(scaled - round(scaled)) > 1e-9:
                raise GeometryError(
                    f"{name} {val} is not aligned with a cell mesh of resolution {resolution}")

    def in_hole(self, y: np.ndarray, halfwidth: float | None = None) -> np.ndarray:
        """Strict-interior hole membership in the inf-norm."""
        h = self.hole_halfwidth if halfwidth is None else halfwidth
        d = np.abs(np.asarray(y, dtype=float) - CELL_CENTER)
        return np.maximum(d[..., 0], d[..., 1]) < h - 1e-12


@dataclass(frozen=True)
class PorosityField:
    """Macroscopic porosity theta(x) on the closed unit square."""

    kind: str
    params: tuple

    @classmethod
    def constant(cls, value: float) -> "PorosityField":
        return cls("constant", (float(value),))

    @classmethod
    def affine(cls, base: float, gx: float, gy: float = 0.0) -> "PorosityField":
        return cls("affine", (float(base), float(gx), float(gy)))

    @classmethod
    def sinusoidal(cls, base: float, ax: float, ay: float = 0.0) -> "PorosityField":
        return cls("sinusoidal", (float(base), float(ax), float(ay)))

    def eval(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "constant":
            return np.full(x.shape[:-1], self.params[0])
        if self.kind == "affine":
            b, gx, gy = self.params
            return b + gx * x[..., 0] + gy * x[..., 1]
        if self.kind == "sinusoidal":
            b, ax, ay = self.params
            return (b + ax * np.sin(2 * np.pi * x[..., 0])
                      + ay * np.sin(2 * np.pi * x[..., 1]))
        raise GeometryError(f"unknown porosity kind {self.kind!r}")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.eval(x)

    def range(self) -> tuple[float, float]:
        """Exact value range over the closed unit square."""
        if self.kind == "constant":
            v = self.params[0]
            return v, v
        if self.kind == "affine":
            b, gx, gy = self.params
            lo = b + min(gx, 0.0) + min(gy, 0.0)
            hi = b + max(gx, 0.0) + max(gy, 0.0)
            return lo, hi
        b, ax, ay = self.params
        return b - abs(ax) - abs(ay), b + abs(ax) + abs(ay)

    def lipschitz(self) -> float:
        if self.kind == "constant":
            return 0.0
        if self.kind == "affine":
            _, gx, gy = self.params
            return float(np.hypot(gx, gy))
        _, ax, ay = self.params
        return float(2 * np.pi * np.hypot(ax, ay))

    def modulus(self, delta: float) -> float:
        """Modulus of continuity: sup of |theta(x) - theta(x')| for |x-x'| <= delta."""
        lo, hi = self.range()
        return min(self.lipschitz() * delta, hi - lo)


class CellTransform:
    """Porosity-parametrized diffeomorphism of the unit cell.

    The map rescales the inf-norm distance r = |y - c|_inf by rho_theta(r)/r.
    Its Jacobian is rank-one off the identity and has the closed-form
    determinant (rho(r)/r) * rho'(r).
    """

    def __init__(self, cell: ReferenceCell):
        self.cell = cell

    def halfwidth(self, theta) -> np.ndarray:
        """Deformed hole half-width h(theta) = sqrt(1 - theta)/2."""
        theta = np.asarray(theta, dtype=float)
        return np.sqrt(np.maximum(1.0 - theta, 0.0)) / 2.0

    def _profile_pair(self, theta, r):
        """rho_theta(r) and its derivative, vectorized over broadcastable args."""
        cell = self.cell
        theta = np.asarray(theta, dtype=float)
        r = np.asarray(r, dtype=float)
        theta, r = np.broadcast_arrays(theta, r)
        if not cell.has_hole:
            return r.copy(), np.ones_like(r)
        hs = cell.hole_halfwidth
        rout = cell.blend_radius
        h = self.halfwidth(theta)
        span = rout - hs
        m0 = h / hs

        rho = r.copy()
        drho = np.ones_like(r)

        lin = r <= hs
        rho = np.where(lin, m0 * r, rho)
        drho = np.where(lin, m0, drho)

        mid = (r > hs) & (r < rout)
        t = np.clip((r - hs) / span, 0.0, 1.0)
        t2 = t * t
        t3 = t2 * t
        h00 = 2 * t3 - 3 * t2 + 1
        h10 = t3 - 2 * t2 + t
        h01 = -2 * t3 + 3 * t2
        h11 = t3 - t2
        hermite = h00 * h + h10 * span * m0 + h01 * rout + h11 * span
        dh00 = 6 * t2 - 6 * t
        dh10 = 3 * t2 - 4 * t + 1
        dh01 = -dh00
        dh11 = 3 * t2 - 2 * t
        dhermite = (dh00 * h + dh10 * span * m0 + dh01 * rout + dh11 * span) / span
        rho = np.where(mid, hermite, rho)
        drho = np.where(mid, dhermite, drho)

        # the reference porosity gives the identity map exactly
        ident = np.abs(h - hs) < 1e-14
        rho = np.where(ident, r, rho)
        drho = np.where(ident, 1.0, drho)
        return rho, drho

    def profile(self, theta, r) -> np.ndarray:
        return self._profile_pair(theta, r)[0]

    def profile_deriv(self, theta, r) -> np.ndarray:
        return self._profile_pair(theta, r)[1]

    def _scale_pair(self, theta, y):
        """(s, s') with s = rho(r)/r (h/h* inside the hole, avoiding 0/0)."""
        cell = self.cell
        y = np.asarray(y, dtype=float)
        d = y - CELL_CENTER
        a = np.abs(d)
        r = np.maximum(a[..., 0], a[..., 1])
        theta = np.asarray(theta, dtype=float)
        theta_b, r = np.broadcast_arrays(theta, r)
        d = np.broadcast_to(d, r.shape + (2,))
        if not cell.has_hole:
            one = np.ones_like(r)
            return d, r, one, one
        rho, drho = self._profile_pair(theta_b, r)
        hs = cell.hole_halfwidth
        h = self.halfwidth(theta_b)
        s = np.where(r <= hs, h / hs, rho / np.maximum(r, hs))
        ident = np.abs(h - hs) < 1e-14
        s = np.where(ident, 1.0, s)
        return d, r, s, drho

    def map(self, theta, y) -> np.ndarray:
        """psi(theta, y): rescale the inf-norm radius around the cell center."""
        d, r, s, _ = self._scale_pair(theta, y)
        return CELL_CENTER + s[..., None] * d

    def displacement(self, theta, y) -> np.ndarray:
        d, r, s, _ = self._scale_pair(theta, y)
        return (s - 1.0)[..., None] * d

    def jacobian(self, theta, y) -> tuple[np.ndarray, np.ndarray]:
        """Analytic Jacobian D_y psi and its determinant.

        With s(r) = rho(r)/r the Jacobian is s*I plus a rank-one update in
        the column of the inf-norm-attaining coordinate; off the kink
        diagonals the formula is exact and det = s * rho'.
        """
        d, r, s, drho = self._scale_pair(theta, y)
        n = d.shape[:-1]
        jac = np.zeros(n + (2, 2))
        jac[..., 0, 0] = s
        jac[..., 1, 1] = s
        imax = (np.abs(d[..., 1]) > np.abs(d[..., 0])).astype(int)
        rsafe = np.where(r > 0, r, 1.0)
        coef = (drho - s) / rsafe
        sign = np.where(np.take_along_axis(d, imax[..., None], axis=-1)[..., 0] >= 0, 1.0, -1.0)
        upd = coef * sign
        i0 = imax == 0
        jac[..., 0, 0] += np.where(i0, upd * d[..., 0], 0.0)
        jac[..., 1, 0] += np.where(i0, upd * d[..., 1], 0.0)
        jac[..., 0, 1] += np.where(~i0, upd * d[..., 0], 0.0)
        jac[..., 1, 1] += np.where(~i0, upd * d[..., 1], 0.0)
        det = s * drho
        return jac, det

    def inverse(self, theta, z, tol=1e-12, maxiter=50) -> np.ndarray:
        """Invert the cell map by Newton iteration started at the target."""
        z = np.asarray(z, dtype=float)
        y = z.copy()
        theta = np.asarray(theta, dtype=float)
        for _ in range(maxiter):
            res = self.map(theta, y) - z
            if np.max(np.abs(res)) <= tol:
                return y
            jac, det = self.jacobian(theta, y)
            if np.min(det) <= 0.0:
                raise GeometryError("degenerate Jacobian during cell-map inversion")
            y = y - np.einsum("...ij,...j->...i", invert_2x2(jac), res)
        res = self.map(theta, y) - z
        if np.max(np.abs(res)) > tol:
            raise GeometryError(
                f"cell-map inversion: no convergence after {maxiter} Newton iterations "
                f"(residual {np.max(np.abs(res)):.3e})")
        return y

    def min_profile_slope(self, tmin: float, tmax: float,
                          theta_samples: int = 33, r_samples: int = 257) -> float:
        if not self.cell.has_hole:
            return 1.0
        thetas = np.linspace(tmin, tmax, theta_samples)
        rs = np.linspace(0.0, 0.5, r_samples)
        _, drho = self._profile_pair(thetas[:, None], rs[None, :])
        return float(drho.min())

    def min_determinant(self, tmin: float, tmax: float,
                        theta_samples: int = 33, r_samples: int = 257) -> float:
        """Determinant floor over the material part (r >= h*), where all
        quadrature points live; inside the hole only positivity matters."""
        if not self.cell.has_hole:
            return 1.0
        thetas = np.linspace(tmin, tmax, theta_samples)
        hs = self.cell.hole_halfwidth
        rs = np.linspace(hs, 0.5, r_samples)
        rho, drho = self._profile_pair(thetas[:, None], rs[None, :])
        s = rho / np.maximum(rs[None, :], hs)
        return float((s * drho).min())

    def validate_theta_range(self, tmin: float, tmax: float, c_j: float = 0.2) -> None:
        """Reject porosity ranges that break monotonicity or the det floor."""
        cell = self.cell
        if not cell.has_hole:
            if not (abs(tmin - 1.0) < 1e-12 and abs(tmax - 1.0) < 1e-12):
                raise GeometryError("a solid cell requires constant porosity 1")
            return
        if not (7.0 / 16.0 < tmin <= tmax < 1.0):
            raise GeometryError(
                f"porosity range [{tmin}, {tmax}] must lie inside (7/16, 1)")
        hmax = float(self.halfwidth(tmin))
        if hmax > HOLE_MARGIN * cell.blend_radius:
            raise GeometryError(
                f"deformed hole half-width {hmax:.4f} exceeds {HOLE_MARGIN} * blend radius "
                f"{cell.blend_radius}")
        slope = self.min_profile_slope(tmin, tmax)
        if slope < MIN_PROFILE_SLOPE:
            raise GeometryError(
                f"radial profile slope {slope:.4f} below {MIN_PROFILE_SLOPE} on "
                f"porosity range [{tmin}, {tmax}]; shrink the hole-size range")
        det = self.min_determinant(tmin, tmax)
        if det < c_j:
            raise GeometryError(
                f"cell-map determinant {det:.4f} below floor c_J = {c_j}")


@dataclass(frozen=True)
class EpsTransform:
    """Cell-wise deformation psi_eps of the eps-scaled periodic domain."""

    eps: float
    transform: CellTransform
    porosity: PorosityField

    def __post_init__(self):
        inv_eps_int(self.eps)

    def _split(self, x):
        anchor, frac = lattice_decompose(self.eps, np.asarray(x, dtype=float))
        theta = self.porosity.eval(anchor)
        return anchor, frac, theta

    def map(self, x) -> np.ndarray:
        anchor, frac, theta = self._split(x)
        return anchor + self.eps * self.transform.map(theta, frac)

    def displacement(self, x) -> np.ndarray:
        anchor, frac, theta = self._split(x)
        return self.eps * self.transform.displacement(theta, frac)

    def jacobian(self, x) -> tuple[np.ndarray, np.ndarray]:
        """(Psi_eps, J_eps); the eps factors cancel by the chain rule."""
        anchor, frac, theta = self._split(x)
        return self.transform.jacobian(theta, frac)

    def inverse(self, z) -> np.ndarray:
        """psi_eps^{-1}; each cell maps into itself, so the anchor is shared."""
        anchor, frac, theta = self._split(z)
        y = self.transform.inverse(theta, frac)
        return anchor + self.eps * y

    def inverse_displacement(self, z) -> np.ndarray:
        return self.inverse(z) - np.asarray(z, dtype=float)


@dataclass(frozen=True)
class LimitTransform:
    """Limit transformation psi_0(x, y) = y + displacement(theta(x), y)."""

    transform: CellTransform
    porosity: PorosityField

    def theta(self, x) -> np.ndarray:
        return self.porosity.eval(x)

    def map(self, x, y) -> np.ndarray:
        return self.transform.map(self.theta(x), y)

    def displacement(self, x, y) -> np.ndarray:
        return self.transform.displacement(self.theta(x), y)

    def jacobian(self, x, y) -> tuple[np.ndarray, np.ndarray]:
        return self.transform.jacobian(self.theta(x), y)

    def inverse(self, x, y) -> np.ndarray:
        return self.transform.inverse(self.theta(x), y)

    def inverse_displacement(self, x, y) -> np.ndarray:
        return self.inverse(x, y) - np.asarray(y, dtype=float)

    def contains(self, x, y) -> np.ndarray:
        """Membership y in Y*_x, tested through the back-transformation."""
        pre = self.inverse(x, y)
        return ~self.transform.cell.in_hole(pre)


# ---------------------------------------------------------------------------
# diagnostics backing the transformation assumptions
# ---------------------------------------------------------------------------

def displacement_consistency(eps_tf: EpsTransform, samples_per_cell: int = 6) -> float:
    """Max gap between the rescaled displacement and its limit on a sample grid."""
    m = inv_eps_int(eps_tf.eps)
    s = samples_per_cell
    t = (np.arange(m * s) + 0.5) / (m * s)
    xx, yy = np.meshgrid(t, t, indexing="ij")
    x = np.stack([xx, yy], axis=-1)
    limit = LimitTransform(eps_tf.transform, eps_tf.porosity)
    _, frac = lattice_decompose(eps_tf.eps, x)
    fine = eps_tf.displacement(x) / eps_tf.eps
    lim = limit.transform.displacement(limit.theta(x), frac)
    return float(np.max(np.linalg.norm(fine - lim, axis=-1)))


def displacement_lipschitz(transform: CellTransform, tmin: float, tmax: float,
                           theta_samples: int = 17, y_samples: int = 33) -> float:
    """Sampled Lipschitz constant of the displacement with respect to theta."""
    if not transform.cell.has_hole or tmax <= tmin:
        return 0.0
    thetas = np.linspace(tmin, tmax, theta_samples)
    t = np.linspace(0.0, 1.0, y_samples)
    yy1, yy2 = np.meshgrid(t, t, indexing="ij")
    y = np.stack([yy1, yy2], axis=-1).reshape(-1, 2)
    disp = np.stack([transform.displacement(th, y) for th in thetas])
    num = np.linalg.norm(np.diff(disp, axis=0), axis=-1).max(axis=(1,))
    den = np.diff(thetas)
    return float((num / den).max())


def unfold_transform_gaps(eps_tf: EpsTransform, y_resolution: int = 16) -> dict:
    """L2(Omega x Y) gaps of the unfolded Jacobian fields against their limits.

    Measures |T_eps(J_eps) - J_0| and |T_eps(Psi_eps^{-1}) - Psi_0^{-1}|.
    the unfolded fields are theta(anchor)-frozen per cell while the limits
    use theta(x); both are evaluated analytically on a shared quadrature.
    """
    from .lattice import GAUSS_1D, _gauss_points_1d

    m = inv_eps_int(eps_tf.eps)
    eps = eps_tf.eps
    tr = eps_tf.transform
    g = _gauss_points_1d(y_resolution)
    yy1, yy2 = np.meshgrid(g, g, indexing="ij")
    ypts = np.stack([yy1, yy2], axis=-1).reshape(-1, 2)          # (Ny, 2)
    wy = (1.0 / y_resolution) ** 2 / 4.0
    anchors = np.arange(m) * eps
    gap_j2 = 0.0
    gap_p2 = 0.0
    wx = eps ** 2 / 4.0
    for gi in GAUSS_1D:
        for gj in GAUSS_1D:
            ax = anchors + eps * gi
            ay = anchors + eps * gj
            xx, yy = np.meshgrid(ax, ay, indexing="ij")
            xpts = np.stack([xx, yy], axis=-1)                   # (m, m, 2)
            th_cell = eps_tf.porosity.eval(eps * np.floor(xpts / eps))
            th_x = eps_tf.porosity.eval(xpts)
            jc, dc = tr.jacobian(th_cell[..., None], ypts)
            jx, dx = tr.jacobian(th_x[..., None], ypts)
            gap_j2 += wx * wy * ((dc - dx) ** 2).sum()
            pc = invert_2x2(jc)
            px = invert_2x2(jx)
            gap_p2 += wx * wy * (((pc - px) ** 2).sum(axis=(-2, -1))).sum()
    return {"jacobian_gap": float(np.sqrt(gap_j2)),
            "inverse_jacobian_gap": float(np.sqrt(gap_p2))}


def jacobian_bounds(transform: CellTransform, thetas, ypts) -> dict:
    """Sampled determinant and spectral-norm bounds of the cell Jacobians."""
    jac, det = transform.jacobian(thetas, ypts)
    inv = invert_2x2(jac)
    return {
        "det_min": float(det.min()),
        "det_max": float(det.max()),
        "psi_norm_max": float(operator_norm_2x2(jac).max()),
        "psi_inv_norm_max": float(operator_norm_2x2(inv).max()),
    }
