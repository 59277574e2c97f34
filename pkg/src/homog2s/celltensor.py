"""Cell problems and effective tensors by the transformed and deformed routes.

The transformed route keeps the fixed perforated cell and carries the
deformation inside the coefficient J0 Psi0^{-1} A0_hat Psi0^{-T}; the
deformed route maps the mesh vertices and solves with A0 directly.  Both
assemble the general form with A0 inside the tensor integrand, so the two
tensors approximate the same homogenized limit.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .expressions import CoefficientField
from .fem import (
    DofMap,
    QuadMesh,
    assemble,
    assemble_flux_rhs,
    gradient_at_quad,
    lumped_weight,
    solve_cg,
)
from .geometry import CellTransform, LimitTransform, invert_2x2

CACHE_SCHEMA = "homog2s_tensor_cache_v1"


@dataclass
class CellSolveResult:
    """Correctors and tensor for one macro point (or porosity value)."""

    route: str
    theta: float
    mesh: QuadMesh
    dofmap: DofMap
    correctors: np.ndarray          # (2, V) nodal
    tensor: np.ndarray              # (2, 2)
    porosity: float
    energy_diagonal: np.ndarray     # (2,) Galerkin energies of e_j + grad w_j
    residuals: np.ndarray           # (2,) discrete weak-form residuals

    def corrector_gradients(self) -> np.ndarray:
        """Gradients of both correctors at quadrature points, (2, Ea, 4, 2)."""
        return np.stack([gradient_at_quad(self.mesh, w) for w in self.correctors])


def _cell_solve(mesh: QuadMesh, dofmap_weightless: DofMap, d_coef: np.ndarray,
                weight_density, tol: float):
    """Shared core: two corrector solves for a diffusion tensor at quad points."""
    weight = lumped_weight(mesh, dofmap_weightless, weight_density)
    dm = dofmap_weightless.with_mean_zero(weight)
    sys = assemble(mesh, dm, coefficient=d_coef)
    _, weights, _, _ = mesh.quad_geometry()
    correctors = []
    energies = np.zeros(2)
    residuals = np.zeros(2)
    tensor = np.zeros((2, 2))
    grads = []
    for j in range(2):
        rhs = assemble_flux_rhs(mesh, dm, d_coef[..., :, j])
        x, _ = solve_cg(
            type(sys)(matrix=sys.matrix, rhs=rhs, dofmap=dm), tol=tol)
        residuals[j] = float(np.linalg.norm(sys.matrix @ x - rhs)
                             / max(np.linalg.norm(rhs), 1e-300))
        nodal = dm.expand(x, mesh.n_vertices)
        correctors.append(nodal)
        g = gradient_at_quad(mesh, nodal)
        grads.append(g)
        ej = np.zeros(2)
        ej[j] = 1.0
        flux = np.einsum("eqij,eqj->eqi", d_coef, g + ej)
        tensor[:, j] = np.einsum("eq,eqi->i", weights, flux)
        energies[j] = float(np.einsum("eq,eqi,eqi->", weights, flux, g + ej))
    porosity = float(np.einsum("eq,eq->", weights,
                               np.broadcast_to(weight_density, weights.shape)))
    return np.stack(correctors), tensor, porosity, energies, residuals


def solve_cell_transformed(transform: CellTransform, coefficient: CoefficientField,
                           theta: float, x=(0.5, 0.5), resolution: int = 32,
                           tol: float = 1e-10) -> CellSolveResult:
    """Periodic cell solve on the fixed cell with transformed coefficients."""
    mesh = QuadMesh.unit_cell(resolution, transform.cell)
    dm = DofMap.periodic(mesh)
    pts = mesh.quad_geometry()[0]
    psi, jdet = transform.jacobian(theta, pts)
    psi_inv = invert_2x2(psi)
    mapped = transform.map(theta, pts)
    a_hat = coefficient.eval(np.broadcast_to(np.asarray(x, dtype=float), pts.shape), mapped)
    d = jdet[..., None, None] * np.einsum("...ij,...jk,...lk->...il",
                                          psi_inv, a_hat, psi_inv)
    correctors, tensor, porosity, energies, residuals = _cell_solve(
        mesh, dm, d, jdet, tol)
    return CellSolveResult(route="transformed", theta=float(theta), mesh=mesh,
                           dofmap=dm, correctors=correctors, tensor=tensor,
                           porosity=porosity, energy_diagonal=energies,
                           residuals=residuals)


def solve_cell_deformed(transform: CellTransform, coefficient: CoefficientField,
                        theta: float, x=(0.5, 0.5), resolution: int = 32,
                        tol: float = 1e-10) -> CellSolveResult:
    """Periodic cell solve on the vertex-mapped deformed cell.

    The displacement vanishes on the boundary ring, so the periodic
    identification of the reference grid survives the mapping.
    """
    ref = QuadMesh.unit_cell(resolution, transform.cell)
    dm = DofMap.periodic(ref)
    mesh = ref.mapped(lambda v: transform.map(theta, v))
    pts = mesh.quad_geometry()[0]
    a0 = coefficient.eval(np.broadcast_to(np.asarray(x, dtype=float), pts.shape), pts)
    correctors, tensor, porosity, energies, residuals = _cell_solve(
        mesh, dm, a0, 1.0, tol)
    return CellSolveResult(route="deformed", theta=float(theta), mesh=mesh,
                           dofmap=dm, correctors=correctors, tensor=tensor,
                           porosity=porosity, energy_diagonal=energies,
                           residuals=residuals)


def effective_tensor_transformed(limit: LimitTransform, coefficient: CoefficientField,
                                 x, resolution: int = 32) -> tuple[np.ndarray, float]:
    res = solve_cell_transformed(limit.transform, coefficient,
                                 float(limit.theta(np.asarray(x, dtype=float))),
                                 x=x, resolution=resolution)
    return res.tensor, res.porosity


def effective_tensor_deformed(limit: LimitTransform, coefficient: CoefficientField,
                              x, resolution: int = 32) -> tuple[np.ndarray, float]:
    res = solve_cell_deformed(limit.transform, coefficient,
                              float(limit.theta(np.asarray(x, dtype=float))),
                              x=x, resolution=resolution)
    return res.tensor, res.porosity


class ThetaTensorCache:
    """Effective tensors on a quantized porosity grid with linear interpolation.

    Valid only for coefficients without explicit x dependence; bin values are
    computed lazily and reused.
    """

    def __init__(self, transform: CellTransform, coefficient: CoefficientField,
                 resolution: int = 32, route: str = "transformed",
                 bin_size: float = 1e-3):
        if coefficient.x_dependent:
            raise ValueError("porosity-keyed cache requires an x-independent coefficient")
        self.transform = transform
        self.coefficient = coefficient
        self.resolution = resolution
        self.route = route
        self.bin_size = bin_size
        self._entries: dict[int, tuple[np.ndarray, float]] = {}
        self.misses = 0
        self.hits = 0

    def _solver(self):
        return (solve_cell_transformed if self.route == "transformed"
                else solve_cell_deformed)

    def _bin_value(self, b: int) -> tuple[np.ndarray, float]:
        if b in self._entries:
            self.hits += 1
            return self._entries[b]
        self.misses += 1
        res = self._solver()(self.transform, self.coefficient, b * self.bin_size,
                             resolution=self.resolution)
        self._entries[b] = (res.tensor, res.porosity)
        return self._entries[b]

    def tensor(self, theta: float) -> tuple[np.ndarray, float]:
        q = self.bin_size
        b0 = int(np.floor(theta / q))
        t = theta / q - b0
        if t < 1e-12:
            tb, pb = self._bin_value(b0)
            return tb.copy(), pb
        t0, p0 = self._bin_value(b0)
        t1, p1 = self._bin_value(b0 + 1)
        return (1 - t) * t0 + t * t1, (1 - t) * p0 + t * p1

    @property
    def size(self) -> int:
        return len(self._entries)

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([CACHE_SCHEMA])
            writer.writerow(["theta", "B11", "B12", "B21", "B22", "porosity"])
            for b in sorted(self._entries):
                tens, por = self._entries[b]
                writer.writerow([f"{b * self.bin_size:.12g}",
                                 *(f"{v:.17g}" for v in tens.ravel()),
                                 f"{por:.17g}"])

    def load_csv(self, path) -> None:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != [CACHE_SCHEMA]:
                raise ValueError(f"unknown tensor-cache schema {header!r}")
            next(reader)  # column names
            for row in reader:
                theta = float(row[0])
                tens = np.array([float(v) for v in row[1:5]]).reshape(2, 2)
                self._entries[int(round(theta / self.bin_size))] = (tens, float(row[5]))


@dataclass
class EffectiveTensorField:
    """Per-point effective tensors over a set of macro sample points."""

    points: np.ndarray              # (N, 2)
    tensors: np.ndarray             # (N, 2, 2)
    porosities: np.ndarray          # (N,)
    thetas: np.ndarray              # (N,)
    route: str
    cached: bool
    cache: Optional[ThetaTensorCache] = field(default=None, repr=False)


def tensor_field(points: np.ndarray, limit: LimitTransform,
                 coefficient: CoefficientField, resolution: int = 32,
                 route: str = "transformed", bin_size: float = 1e-3,
                 use_cache: bool = True,
                 cache: Optional[ThetaTensorCache] = None) -> EffectiveTensorField:
    """Effective tensors at macro sample points, cached over porosity bins
    whenever the coefficient has no explicit x dependence."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    thetas = limit.theta(points)
    tensors = np.empty((points.shape[0], 2, 2))
    porosities = np.empty(points.shape[0])
    cacheable = use_cache and not coefficient.x_dependent
    if cacheable:
        cache = cache or ThetaTensorCache(limit.transform, coefficient,
                                          resolution=resolution, route=route,
                                          bin_size=bin_size)
        for i, th in enumerate(thetas):
            tensors[i], porosities[i] = cache.tensor(float(th))
    else:
        solver = solve_cell_transformed if route == "transformed" else solve_cell_deformed
        for i, (pt, th) in enumerate(zip(points, thetas)):
            res = solver(limit.transform, coefficient, float(th), x=pt,
                         resolution=resolution)
            tensors[i], porosities[i] = res.tensor, res.porosity
    return EffectiveTensorField(points=points, tensors=tensors,
                                porosities=porosities, thetas=thetas,
                                route=route, cached=cacheable, cache=cache)


def richardson_tensor(transform: CellTransform, coefficient: CoefficientField,
                      theta: float, resolutions=(64, 128, 256),
                      route: str = "transformed") -> np.ndarray:
    """Overkill-oracle tensor: Richardson extrapolation at the observed order.

    Hole corners limit the convergence rate below h^2, so the order is
    estimated from the three-level diagonal increments before eliminating
    the leading error term.
    """
    solver = solve_cell_transformed if route == "transformed" else solve_cell_deformed
    tens = [solver(transform, coefficient, theta, resolution=r).tensor
            for r in resolutions]
    d_coarse = np.trace(tens[1] - tens[0]) / 2.0
    d_fine = np.trace(tens[2] - tens[1]) / 2.0
    if abs(d_fine) < 1e-14:
        return tens[-1]
    ratio = d_coarse / d_fine
    if ratio <= 1.0:
        return tens[-1]
    return tens[-1] + (tens[-1] - tens[-2]) / (ratio - 1.0)
