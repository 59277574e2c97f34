"""Structured-quad Q1 finite elements with 2x2 Gauss quadrature.

Meshes are structured grids of bilinear quadrilaterals; deformed geometry
enters through vertex-mapped copies that share connectivity and masks with
their reference mesh.  Assembly is isoparametric and vectorized over
elements, so one code path covers reference and mapped configurations.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional, Union

import numpy as np
import scipy.sparse as sp

from .geometry import ReferenceCell
from .lattice import GAUSS_1D, inv_eps_int

#: reference-square Gauss points (4, 2) and weights (4,)
QUAD_POINTS = np.array([[gx, gy] for gx in GAUSS_1D for gy in GAUSS_1D])
QUAD_WEIGHTS = np.full(4, 0.25)


class FemError(ValueError):
    """Raised for degenerate meshes, indefinite data or solver failure."""


def _shape_values(xi: np.ndarray) -> np.ndarray:
    """Q1 shape functions at reference points (..., 2) -> (..., 4)."""
    x, y = xi[..., 0], xi[..., 1]
    return np.stack([(1 - x) * (1 - y), x * (1 - y), x * y, (1 - x) * y], axis=-1)


def _shape_grads(xi: np.ndarray) -> np.ndarray:
    """Reference gradients at points (..., 2) -> (..., 4, 2)."""
    x, y = xi[..., 0], xi[..., 1]
    gx = np.stack([-(1 - y), (1 - y), y, -y], axis=-1)
    gy = np.stack([-(1 - x), -x, x, (1 - x)], axis=-1)
    return np.stack([gx, gy], axis=-1)


@dataclass
class QuadMesh:
    """Structured quadrilateral mesh with an active-element mask."""

    vertices: np.ndarray          # (V, 2)
    elements: np.ndarray          # (E, 4) vertex ids, counter-clockwise
    active: np.ndarray            # (E,) bool
    shape: tuple[int, int]        # structured element grid (nx, ny)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_active(self) -> int:
        return int(self.active.sum())

    @classmethod
    def rectangle(cls, nx: int, ny: Optional[int] = None,
                  lower=(0.0, 0.0), size=(1.0, 1.0)) -> "QuadMesh":
        ny = nx if ny is None else ny
        xs = lower[0] + size[0] * np.arange(nx + 1) / nx
        ys = lower[1] + size[1] * np.arange(ny + 1) / ny
        xx, yy = np.meshgrid(xs, ys, indexing="ij")
        vertices = np.stack([xx.ravel(), yy.ravel()], axis=-1)
        ex, ey = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        v00 = ex * (ny + 1) + ey
        elements = np.stack([v00, v00 + (ny + 1), v00 + (ny + 1) + 1, v00 + 1],
                            axis=-1).reshape(-1, 4)
        return cls(vertices=vertices, elements=elements,
                   active=np.ones(nx * ny, dtype=bool), shape=(nx, ny))

    @classmethod
    def unit_cell(cls, resolution: int, cell: Optional[ReferenceCell] = None) -> "QuadMesh":
        """Unit cell Y with the (grid-aligned) hole elements removed."""
        mesh = cls.rectangle(resolution)
        if cell is not None and cell.has_hole:
            cell.assert_grid_aligned(resolution)
            mesh.active = ~cell.in_hole(mesh.element_centers_structured())
        return mesh

    @classmethod
    def perforated(cls, resolution: int, eps: float,
                   cell: Optional[ReferenceCell] = None) -> "QuadMesh":
        """Periodic reference domain: unit square minus one hole per eps-cell."""
        m = inv_eps_int(eps)
        if resolution % m != 0:
            raise FemError(f"mesh resolution {resolution} does not tile 1/eps = {m}")
        mesh = cls.rectangle(resolution)
        if cell is not None and cell.has_hole:
            nc = resolution // m
            cell.assert_grid_aligned(nc)
            centers = mesh.element_centers_structured()
            frac = (centers / eps) % 1.0
            mesh.active = ~cell.in_hole(frac)
        return mesh

    def element_centers_structured(self) -> np.ndarray:
        quads = self.vertices[self.elements]
        return quads.mean(axis=1)

    def mapped(self, fn: Callable[[np.ndarray], np.ndarray]) -> "QuadMesh":
        """Vertex-mapped copy sharing connectivity and the active mask."""
        return replace(self, vertices=np.asarray(fn(self.vertices), dtype=float),
                       active=self.active.copy())

    # -- quadrature geometry -------------------------------------------------

    def quad_geometry(self):
        """Physical Gauss points, weights (w * detJ) and shape gradients.

        Returns (points (Ea,4,2), weights (Ea,4), grads (Ea,4,4nodes,2),
        shapes (4,4nodes)) over active elements.
        """
        coords = self.vertices[self.elements[self.active]]      # (Ea, 4, 2)
        shp = _shape_values(QUAD_POINTS)                        # (4q, 4n)
        dshp = _shape_grads(QUAD_POINTS)                        # (4q, 4n, 2)
        pts = np.einsum("qa,eai->eqi", shp, coords)
        jac = np.einsum("qad,eai->eqid", dshp, coords)          # (Ea, 4q, 2, 2)
        det = jac[..., 0, 0] * jac[..., 1, 1] - jac[..., 0, 1] * jac[..., 1, 0]
        if det.size and det.min() <= 0.0:
            raise FemError("inverted element: mapped element with non-positive Jacobian")
        inv = np.empty_like(jac)
        inv[..., 0, 0] = jac[..., 1, 1]
        inv[..., 0, 1] = -jac[..., 0, 1]
        inv[..., 1, 0] = -jac[..., 1, 0]
        inv[..., 1, 1] = jac[..., 0, 0]
        inv = inv / det[..., None, None]
        grads = np.einsum("eqdi,qad->eqai", inv, dshp)          # J^{-T} ref-grads
        weights = det * QUAD_WEIGHTS[None, :]
        return pts, weights, grads, shp


@dataclass
class DofMap:
    """Vertex-to-DOF map with optional periodic identification."""

    vertex_to_dof: np.ndarray        # (V,) int, -1 for vertices without a DOF
    ndof: int
    mean_zero: bool = False
    weight: Optional[np.ndarray] = None   # (ndof,) projection weight

    @classmethod
    def full(cls, mesh: QuadMesh) -> "DofMap":
        act = np.unique(mesh.elements[mesh.active])
        v2d = np.full(mesh.n_vertices, -1, dtype=int)
        v2d[act] = np.arange(act.size)
        return cls(vertex_to_dof=v2d, ndof=act.size)

    @classmethod
    def periodic(cls, mesh: QuadMesh) -> "DofMap":
        """Identify opposite faces of the structured unit-cell grid."""
        nx, ny = mesh.shape
        ix, iy = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1), indexing="ij")
        rep = (ix % nx) * (ny + 1) + (iy % ny)
        rep = rep.ravel()
        act = np.unique(rep[np.unique(mesh.elements[mesh.active])])
        lookup = np.full(mesh.n_vertices, -1, dtype=int)
        lookup[act] = np.arange(act.size)
        return cls(vertex_to_dof=lookup[rep], ndof=act.size)

    def with_mean_zero(self, weight: np.ndarray) -> "DofMap":
        return DofMap(self.vertex_to_dof, self.ndof, mean_zero=True,
                      weight=np.asarray(weight, dtype=float))

    def expand(self, x: np.ndarray, n_vertices: int) -> np.ndarray:
        """DOF vector -> nodal values (zero on DOF-less vertices)."""
        out = np.zeros(n_vertices)
        has = self.vertex_to_dof >= 0
        out[has] = x[self.vertex_to_dof[has]]
        return out


@dataclass
class SparseSystem:
    """Symmetric sparse system with its right-hand side and DOF map."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    dofmap: DofMap

    def symmetry_residual(self) -> float:
        d = abs(self.matrix - self.matrix.T)
        scale = max(abs(self.matrix).max(), 1e-300)
        return float(d.max() / scale)


FieldLike = Union[np.ndarray, Callable[[np.ndarray], np.ndarray], float, None]


def _eval_field(field: FieldLike, pts: np.ndarray):
    if field is None:
        return None
    if callable(field):
        return np.asarray(field(pts), dtype=float)
    if np.isscalar(field):
        return np.full(pts.shape[:-1], float(field))
    return np.asarray(field, dtype=float)


def assemble(mesh: QuadMesh, dofmap: DofMap, coefficient: FieldLike = None,
             reaction: FieldLike = None, load: FieldLike = None,
             stiffness_scale: float = 1.0) -> SparseSystem:
    """Assemble stiffness + mass + load over the active elements.

    coefficient gives the (matrix- or scalar-valued) diffusion tensor at the
    physical quadrature points, reaction the nonnegative zero-order weight
    and load the source density.
    """
    pts, weights, grads, shp = mesh.quad_geometry()
    ea = pts.shape[0]
    ke = np.zeros((ea, 4, 4))
    fe = np.zeros((ea, 4))

    aq = _eval_field(coefficient, pts)
    if aq is not None:
        if not np.all(np.isfinite(aq)):
            raise FemError("non-finite coefficient value at a quadrature point")
        if aq.ndim == pts.ndim - 1:  # scalar coefficient
            aq = aq[..., None, None] * np.eye(2)
        flux = np.einsum("eqij,eqbj->eqbi", aq, grads)
        ke += stiffness_scale * np.einsum("eq,eqai,eqbi->eab", weights, grads, flux)

    rq = _eval_field(reaction, pts)
    if rq is not None:
        if rq.min() < 0.0:
            raise FemError("negative reaction weight")
        ke += np.einsum("eq,qa,qb->eab", weights * rq, shp, shp)

    fq = _eval_field(load, pts)
    if fq is not None:
        fe += np.einsum("eq,qa->ea", weights * fq, shp)

    dofs = dofmap.vertex_to_dof[mesh.elements[mesh.active]]     # (Ea, 4)
    if dofs.size and dofs.min() < 0:
        raise FemError("active element references a vertex without a DOF")
    rows = np.repeat(dofs, 4, axis=1).ravel()
    cols = np.tile(dofs, (1, 4)).ravel()
    mat = sp.coo_matrix((ke.ravel(), (rows, cols)),
                        shape=(dofmap.ndof, dofmap.ndof)).tocsr()
    rhs = np.zeros(dofmap.ndof)
    np.add.at(rhs, dofs.ravel(), fe.ravel())
    return SparseSystem(matrix=mat, rhs=rhs, dofmap=dofmap)


@dataclass
class CgReport:
    iterations: int
    residual: float
    converged: bool


def solve_cg(system: SparseSystem, tol: float = 1e-10, maxiter: Optional[int] = None,
             jacobi: bool = True) -> tuple[np.ndarray, CgReport]:
    """Conjugate gradients with optional Jacobi preconditioning.

    With an active mean-zero constraint the iterates are re-projected every
    iteration: the residual onto zero sum (the kernel of the periodic
    pure-Neumann operator) and the solution onto weighted mean zero.
    """
    a = system.matrix
    b = system.rhs
    n = b.shape[0]
    maxiter = maxiter if maxiter is not None else max(20 * n, 200)
    dm = system.dofmap
    w = dm.weight if dm.weight is not None else np.ones(n)
    wsum = w.sum()

    def project(x, r):
        x -= (w @ x) / wsum
        r -= r.mean()
        return x, r

    diag = a.diagonal()
    if np.any(diag <= 0.0):
        raise FemError("system diagonal must be positive")
    minv = 1.0 / diag if jacobi else np.ones(n)

    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), CgReport(iterations=0, residual=0.0, converged=True)
    x = np.zeros(n)
    r = b.copy()
    if dm.mean_zero:
        x, r = project(x, r)
    z = minv * r
    p = z.copy()
    rz = r @ z
    for k in range(1, maxiter + 1):
        ap = a @ p
        alpha = rz / (p @ ap)
        x += alpha * p
        r -= alpha * ap
        if dm.mean_zero:
            x, r = project(x, r)
        res = np.linalg.norm(r) / bnorm
        if res <= tol:
            return x, CgReport(iterations=k, residual=float(res), converged=True)
        z = minv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise FemError(f"CG: max iterations exceeded ({maxiter}), residual {res:.3e}")


# ---------------------------------------------------------------------------
# norms and field evaluation
# ---------------------------------------------------------------------------

def nodal_to_quad(mesh: QuadMesh, nodal: np.ndarray) -> np.ndarray:
    shp = _shape_values(QUAD_POINTS)
    return np.einsum("qa,ea->eq", shp, nodal[mesh.elements[mesh.active]])


def gradient_at_quad(mesh: QuadMesh, nodal: np.ndarray) -> np.ndarray:
    _, _, grads, _ = mesh.quad_geometry()
    return np.einsum("eqai,ea->eqi", grads, nodal[mesh.elements[mesh.active]])


def norms(mesh: QuadMesh, field: FieldLike, kind: str = "l2") -> float:
    """Gauss-quadrature norm over the active elements.

    field is either a nodal array (V,) or a callable over physical points.
    """
    pts, weights, grads, shp = mesh.quad_geometry()
    if callable(field) or np.isscalar(field):
        vq = _eval_field(field, pts)
        if kind == "h1":
            raise FemError("H1 seminorm requires a nodal field")
    else:
        nodal = np.asarray(field, dtype=float)
        if kind == "h1":
            gq = np.einsum("eqai,ea->eqi", grads, nodal[mesh.elements[mesh.active]])
            return float(np.sqrt((weights * (gq * gq).sum(axis=-1)).sum()))
        if kind == "linf":
            act = np.unique(mesh.elements[mesh.active])
            return float(np.abs(nodal[act]).max())
        vq = np.einsum("qa,ea->eq", shp, nodal[mesh.elements[mesh.active]])
    if kind == "l2":
        return float(np.sqrt((weights * vq * vq).sum()))
    if kind == "linf":
        return float(np.abs(vq).max())
    if kind == "l1":
        return float((weights * np.abs(vq)).sum())
    raise FemError(f"unknown norm kind {kind!r}")


def integrate(mesh: QuadMesh, field: FieldLike = 1.0) -> float:
    pts, weights, _, shp = mesh.quad_geometry()
    if callable(field) or np.isscalar(field):
        vq = _eval_field(field, pts)
    else:
        vq = np.einsum("qa,ea->eq", shp,
                       np.asarray(field, dtype=float)[mesh.elements[mesh.active]])
    return float((weights * vq).sum())


def lumped_weight(mesh: QuadMesh, dofmap: DofMap, density: FieldLike = 1.0) -> np.ndarray:
    """Row sums of the weighted mass matrix; projection weight for /R."""
    return assemble(mesh, dofmap, load=density).rhs


def assemble_flux_rhs(mesh: QuadMesh, dofmap: DofMap, flux: np.ndarray) -> np.ndarray:
    """Right-hand side -integral of flux . grad(phi_a) for a given flux field.

    flux has shape (Ea, 4, 2) at the active-element quadrature points.
    """
    _, weights, grads, _ = mesh.quad_geometry()
    fe = -np.einsum("eq,eqai,eqi->ea", weights, grads, flux)
    dofs = dofmap.vertex_to_dof[mesh.elements[mesh.active]]
    rhs = np.zeros(dofmap.ndof)
    np.add.at(rhs, dofs.ravel(), fe.ravel())
    return rhs


def mapped_cell_min_det(transform, theta: float, resolution: int = 64) -> float:
    """Normalized minimum Gauss-point Jacobian of the vertex-mapped unit cell.

    The inf-norm blend creases along the cell diagonals; for large holes the
    crease folds mapped bilinear elements.  Configurations must keep this
    value positive for every admissible porosity.
    """
    ref = QuadMesh.unit_cell(resolution, transform.cell)
    mesh = ref.mapped(lambda v: transform.map(theta, v))
    coords = mesh.vertices[mesh.elements[mesh.active]]
    dshp = _shape_grads(QUAD_POINTS)
    jac = np.einsum("qad,eai->eqid", dshp, coords)
    det = jac[..., 0, 0] * jac[..., 1, 1] - jac[..., 0, 1] * jac[..., 1, 0]
    return float(det.min()) * resolution * resolution


class StructuredInterpolant:
    """Bilinear point evaluation of a nodal field on the structured unit grid."""

    def __init__(self, resolution: int, nodal: np.ndarray):
        self.n = resolution
        self.values = np.asarray(nodal, dtype=float).reshape(resolution + 1, resolution + 1)

    def _locate(self, pts):
        n = self.n
        e = np.clip(np.floor(pts * n).astype(int), 0, n - 1)
        local = pts * n - e
        return e, local

    def value(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        e, loc = self._locate(pts)
        v = self.values
        ix, iy = e[..., 0], e[..., 1]
        lx, ly = loc[..., 0], loc[..., 1]
        return (v[ix, iy] * (1 - lx) * (1 - ly) + v[ix + 1, iy] * lx * (1 - ly)
                + v[ix + 1, iy + 1] * lx * ly + v[ix, iy + 1] * (1 - lx) * ly)

    def gradient(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        e, loc = self._locate(pts)
        v = self.values
        n = self.n
        ix, iy = e[..., 0], e[..., 1]
        lx, ly = loc[..., 0], loc[..., 1]
        dx = ((v[ix + 1, iy] - v[ix, iy]) * (1 - ly)
              + (v[ix + 1, iy + 1] - v[ix, iy + 1]) * ly) * n
        dy = ((v[ix, iy + 1] - v[ix, iy]) * (1 - lx)
              + (v[ix + 1, iy + 1] - v[ix + 1, iy]) * lx) * n
        return np.stack([dx, dy], axis=-1)
