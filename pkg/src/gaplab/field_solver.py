"""Direct solves of the constant-potential-inclusion problem.

Solves the three auxiliary potentials (unit value on one inclusion at a
time, prescribed trace on the outer boundary), extracts boundary fluxes,
assembles the 2x2 flux system and the full solution.

The flux matrix entry a_ij is the flux of potential j through the boundary
of inclusion i.  Default fluxes are the consistent (Galerkin) ones derived
from the stiffness matrix: they satisfy reciprocity a12 = a21 and the
conservation column sums at solver tolerance.  The outer-boundary
quadrature flux (one-sided normal differencing on the fitted ring,
trapezoid in arclength) is the independent geometric estimate used to
cross-check them.

The constants C1, C2 are obtained by Cramer's rule on the symmetrized
system; the difference C1 - C2 is evaluated through its reduced form
rho_n * Q_eps / Theta_eps, which is the same rational function of the flux
entries, so the identity between them is exact by construction and is
recorded per solve as a self-test.

Solves are pure: distinct fields and distinct eps values may run
concurrently; results are deterministic for a fixed grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np

from .fem import FemOperator, SolverError, fem_operator
from .geometry import GapGeometry, GeometryError, OuterDomain, PlacedInclusion
from .meshing import (GridBudgetError, Mesh, MeshQualityError, ResolutionSpec,
                      build_pair_mesh, build_single_mesh)

__all__ = [
    "GradedGrid", "DiscreteField", "BoundaryData", "FluxSystem",
    "DegenerateSystemError", "build_grid", "build_single_inclusion_grid",
    "solve_vi", "solve_v0", "flux_inclusion", "flux_outer",
    "assemble_flux_system", "assemble_u", "gradient", "nodal_gradient", "energy_of",
    "max_gradient", "SolverError", "GridBudgetError", "ResolutionSpec",
]

DEFAULT_RESOLUTION = ResolutionSpec()


class DegenerateSystemError(RuntimeError):
    """The 2x2 flux system is numerically singular."""


@dataclass
class GradedGrid:
    """Fitted triangulation plus its assembled Galerkin operator."""

    mesh: Mesh
    op: FemOperator
    geom: GapGeometry | None
    outer: OuterDomain
    _ring_weights: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return 2

    @property
    def n_nodes(self) -> int:
        return self.mesh.n_nodes

    @property
    def tags(self) -> dict:
        return self.mesh.tags

    @property
    def max_cell(self) -> float:
        return self.mesh.max_cell

    @property
    def gap_layers(self) -> int:
        return self.mesh.gap_layers

    def gap_cells(self, r: float | None = None) -> np.ndarray:
        """Triangle ids of the gap block with |centroid x'| <= r."""
        if self.mesh.gap_tris is None:
            raise GeometryError("grid has no gap block")
        tris = self.mesh.gap_tris
        if r is None:
            return tris
        cx = self.mesh.tri_centroids()[tris, 0]
        return tris[np.abs(cx) <= r]

    def ring_derivative_weights(self) -> np.ndarray:
        """One-sided differentiation weights at depth 0 of the ring lines."""
        if self._ring_weights is None:
            d = self.mesh.ring_depths
            m = min(4, len(d))
            scale = d[m - 1]
            V = np.vander(d[:m] / scale, m, increasing=True).T
            e1 = np.zeros(m)
            e1[1] = 1.0
            self._ring_weights = np.linalg.solve(V, e1) / scale
        return self._ring_weights


@dataclass
class BoundaryData:
    """Trace prescribed on the outer boundary."""

    fn: Callable
    name: str = "custom"
    note: str = "continuous"

    def __call__(self, p):
        return self.fn(p)

    def on_nodes(self, pts: np.ndarray) -> np.ndarray:
        vals = np.array([float(self.fn(p)) for p in pts])
        if not np.all(np.isfinite(vals)):
            raise SolverError("boundary data is not finite on the outer boundary")
        return vals


@dataclass
class DiscreteField:
    """Node values of one solved potential on its grid."""

    grid: GradedGrid
    values: np.ndarray
    label: str = "custom"
    residual: float = 0.0


def build_grid(geom: GapGeometry, outer: OuterDomain,
               spec: ResolutionSpec = DEFAULT_RESOLUTION,
               *, eps_floor: float = 1e-5) -> GradedGrid:
    """Graded fitted grid for the translated pair; reports the node count.

    Raises GridBudgetError when the gap cannot be resolved within the node
    budget (eps below the supported floor at default budgets).
    """
    if geom.eps < eps_floor and spec.max_nodes <= DEFAULT_RESOLUTION.max_nodes:
        raise GridBudgetError(
            f"eps={geom.eps:g} below the 2D floor {eps_floor:g} at default budgets")
    mesh = build_pair_mesh(geom, outer, spec)
    return GradedGrid(mesh=mesh, op=fem_operator(mesh), geom=geom, outer=outer)


def build_single_inclusion_grid(placed: PlacedInclusion, outer: OuterDomain,
                                spec: ResolutionSpec = DEFAULT_RESOLUTION) -> GradedGrid:
    mesh = build_single_mesh(placed, outer, spec)
    return GradedGrid(mesh=mesh, op=fem_operator(mesh), geom=None, outer=outer)


def _solve(grid: GradedGrid, boundary_values: np.ndarray, label: str,
           method: str = "direct") -> DiscreteField:
    u, res = grid.op.solve_dirichlet(boundary_values, method=method)
    return DiscreteField(grid=grid, values=u, label=label, residual=res)


def solve_vi(i: int, grid: GradedGrid, method: str = "direct") -> DiscreteField:
    """Unit potential of inclusion i: 1 on its boundary, 0 elsewhere."""
    if i not in (1, 2):
        raise SolverError("inclusion index must be 1 or 2")
    tag = f"d{i}"
    if tag not in grid.tags:
        raise SolverError(f"grid has no boundary {tag}")
    vals = np.zeros(len(grid.op.boundary_idx))
    pos = np.searchsorted(grid.op.boundary_idx, grid.tags[tag])
    vals[pos] = 1.0
    return _solve(grid, vals, f"v{i}", method)


def solve_v0(phi, grid: GradedGrid, method: str = "direct") -> DiscreteField:
    """Potential with trace phi on the outer boundary, 0 on the inclusions."""
    data = phi if isinstance(phi, BoundaryData) else BoundaryData(phi)
    vals = np.zeros(len(grid.op.boundary_idx))
    outer_nodes = grid.tags["outer"]
    pos = np.searchsorted(grid.op.boundary_idx, outer_nodes)
    vals[pos] = data.on_nodes(grid.mesh.points[outer_nodes])
    return _solve(grid, vals, "v0", method)


def flux_inclusion(field: DiscreteField, i: int, method: str = "consistent") -> float:
    """Flux of the field through the boundary of inclusion i.

    "consistent" evaluates the Galerkin flux (exactly the Dirichlet energy
    for the inclusion's own unit potential); "geometric" integrates the
    one-sided normal derivative over the wall polyline (first-order
    diagnostic).
    """
    tag = f"d{i}"
    if tag not in field.grid.tags:
        raise SolverError(f"grid has no boundary {tag}")
    if method == "consistent":
        return field.grid.op.boundary_flux(field.values, field.grid.tags[tag])
    if method == "geometric":
        return _geometric_wall_flux(field, tag)
    raise SolverError(f"unknown flux method {method!r}")


def _geometric_wall_flux(field: DiscreteField, tag: str) -> float:
    mesh = field.grid.mesh
    loop = mesh.wall_loops[tag]
    pts = mesh.points[loop]
    nod = field.grid.op.nodal_gradients(field.values)[loop]
    nxt = np.roll(pts, -1, axis=0)
    prv = np.roll(pts, 1, axis=0)
    ds = 0.5 * (np.linalg.norm(nxt - pts, axis=1) + np.linalg.norm(pts - prv, axis=1))
    tang = nxt - prv
    tang /= np.linalg.norm(tang, axis=1)[:, None]
    nrm = np.column_stack([tang[:, 1], -tang[:, 0]])
    # orient the normal out of the domain (into the inclusion)
    centroid = pts.mean(axis=0)
    inward = np.einsum("kd,kd->k", nrm, centroid - pts)
    nrm[inward < 0] *= -1.0
    return float(np.sum(np.einsum("kd,kd->k", nod, nrm) * ds))


def flux_outer(field: DiscreteField) -> float:
    """Outward normal-derivative quadrature over the outer boundary.

    One-sided differencing from inside along the fitted ring lines,
    trapezoid rule in arclength.
    """
    grid = field.grid
    w = grid.ring_derivative_weights()
    lines = grid.mesh.ring_lines[:, : len(w)]
    inward_derivative = field.values[lines] @ w
    return float(np.sum(-inward_derivative) * grid.mesh.ring_ds)


def flux_outer_weighted(field: DiscreteField, weight: Callable) -> float:
    """Outer flux integral against a boundary weight function."""
    grid = field.grid
    w = grid.ring_derivative_weights()
    lines = grid.mesh.ring_lines[:, : len(w)]
    inward_derivative = field.values[lines] @ w
    pts = grid.mesh.points[lines[:, 0]]
    wv = np.array([float(weight(p)) for p in pts])
    return float(np.sum(-inward_derivative * wv) * grid.mesh.ring_ds)


@dataclass(frozen=True)
class FluxSystem:
    """The 2x2 flux system and its Cramer solution.

    ``a`` holds the raw consistent fluxes (a[i-1, j-1] = flux of v_j through
    inclusion i); ``a12_sym`` their symmetrized off-diagonal; ``alpha1/2``
    the column-sum outer fluxes used in the reduced algebra; ``alpha*_quad``
    the independent geometric quadrature values.  ``C_diff`` is C1 - C2
    evaluated through the reduced Cramer form rho*Q/Theta.
    """

    a: np.ndarray
    a12_sym: float
    b: np.ndarray
    alpha1: float
    alpha2: float
    alpha1_quad: float
    alpha2_quad: float
    C1: float
    C2: float
    C_diff: float
    det: float

    @property
    def reciprocity_defect(self) -> float:
        return abs(self.a[0, 1] - self.a[1, 0])

    @property
    def green_defect(self) -> tuple[float, float]:
        """|a11 + a12 + alpha_quad_1| and |a12 + a22 + alpha_quad_2|."""
        return (abs(self.a[0, 0] + self.a[0, 1] + self.alpha1_quad),
                abs(self.a[0, 1] + self.a[1, 1] + self.alpha2_quad))


def solve_flux_constants(a: np.ndarray, b: np.ndarray):
    """Cramer solution of the symmetrized 2x2 flux system.

    Returns (C1, C2, C_diff, s, alpha1, alpha2, det); C_diff is evaluated
    through the reduced form Q/(Theta/rho), the same rational function of
    the entries, so the constant-difference identity is exact by
    construction.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    s = 0.5 * (a[0, 1] + a[1, 0])
    alpha1 = -(a[0, 0] + s)
    alpha2 = -(s + a[1, 1])
    det = a[0, 0] * a[1, 1] - s * s
    scale = max(abs(a[0, 0] * a[1, 1]), s * s, 1e-300)
    if abs(det) < 1e-12 * scale:
        raise DegenerateSystemError(
            f"flux system determinant {det:.3e} is degenerate at scale {scale:.3e}")
    C1 = (b[0] * a[1, 1] - b[1] * s) / det
    q = b[1] * alpha1 - b[0] * alpha2
    theta_factor = -a[0, 0] * alpha2 + s * alpha1    # = Theta_eps / rho_n
    C_diff = q / theta_factor
    C2 = C1 - C_diff
    return C1, C2, C_diff, s, alpha1, alpha2, det


def assemble_flux_system(v1: DiscreteField, v2: DiscreteField,
                         v0: DiscreteField) -> FluxSystem:
    """Fluxes, Cramer constants, and the reduced-difference identity."""
    grid = v1.grid
    if v2.grid is not grid or v0.grid is not grid:
        raise SolverError("fields were not solved on the same grid")
    a = np.array([[flux_inclusion(v1, 1), flux_inclusion(v2, 1)],
                  [flux_inclusion(v1, 2), flux_inclusion(v2, 2)]])
    b = np.array([-flux_inclusion(v0, 1), -flux_inclusion(v0, 2)])
    C1, C2, C_diff, s, alpha1, alpha2, det = solve_flux_constants(a, b)
    return FluxSystem(
        a=a, a12_sym=s, b=b, alpha1=alpha1, alpha2=alpha2,
        alpha1_quad=flux_outer(v1), alpha2_quad=flux_outer(v2),
        C1=C1, C2=C2, C_diff=C_diff, det=det,
    )


def assemble_u(fs: FluxSystem, v1: DiscreteField, v2: DiscreteField,
               v0: DiscreteField) -> DiscreteField:
    """Full solution C1*v1 + C2*v2 + v0, nodewise."""
    grid = v1.grid
    if v2.grid is not grid or v0.grid is not grid:
        raise SolverError("fields were not solved on the same grid")
    u = fs.C1 * v1.values + fs.C2 * v2.values + v0.values
    return DiscreteField(grid=grid, values=u, label="u",
                         residual=max(v1.residual, v2.residual, v0.residual))


def gradient(field: DiscreteField) -> np.ndarray:
    """(M, 2) gradient per cell (exact for the P1 interpolant)."""
    return field.grid.op.cell_gradients(field.values)


def nodal_gradient(field: DiscreteField) -> np.ndarray:
    """Recovered nodal gradient (second-order in the interior)."""
    return field.grid.op.nodal_gradients(field.values)


def max_gradient(field: DiscreteField, cells: np.ndarray | None = None) -> float:
    g = gradient(field)
    if cells is not None:
        g = g[cells]
    return float(np.max(np.linalg.norm(g, axis=1)))


def energy_of(field: DiscreteField) -> float:
    """Dirichlet energy by exact cell quadrature of the interpolant."""
    return field.grid.op.energy(field.values)
