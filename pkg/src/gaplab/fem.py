"""Piecewise-linear Galerkin engine on the fitted triangulation.

Assembly is vectorized over triangles.  The Dirichlet solve eliminates
tagged boundary nodes and factorizes the interior block once per mesh
(direct sparse LU by default; conjugate gradients as an option, the interior
stiffness being symmetric positive definite).  Fluxes, energies and
gradients are all derived from the same stiffness matrix, which is what
makes the flux reciprocity and conservation identities hold at solver
tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = ["SolverError", "FemOperator", "fem_operator"]


class SolverError(RuntimeError):
    pass


@dataclass
class FemOperator:
    """Stiffness matrix and per-cell gradient data for one mesh."""

    mesh: object
    K: sp.csr_matrix            # full stiffness, all nodes
    tri_area: np.ndarray        # (M,)
    grad_basis: np.ndarray      # (M, 3, 2) gradients of the barycentric basis
    boundary_idx: np.ndarray    # sorted union of tagged nodes
    interior_idx: np.ndarray
    _lu: object = None
    _K_ib: sp.csr_matrix = None
    _K_ii: sp.csr_matrix = None

    def solve_dirichlet(self, boundary_values: np.ndarray,
                        method: str = "direct", tol: float = 1e-12):
        """Solve the discrete Laplace problem with the given boundary trace.

        Returns (values at all nodes, relative residual of the interior system).
        """
        n = self.K.shape[0]
        u = np.zeros(n)
        u[self.boundary_idx] = boundary_values
        rhs = -self._K_ib @ boundary_values
        if not np.all(np.isfinite(rhs)):
            raise SolverError("non-finite boundary data")
        if np.linalg.norm(rhs) == 0.0:
            ui = np.zeros(len(self.interior_idx))
        elif method == "direct":
            if self._lu is None:
                self._lu = spla.splu(self._K_ii.tocsc())
            ui = self._lu.solve(rhs)
        elif method == "cg":
            M = sp.diags(1.0 / self._K_ii.diagonal())
            ui, info = spla.cg(self._K_ii, rhs, rtol=tol, maxiter=50000, M=M)
            if info != 0:
                raise SolverError(f"conjugate gradients did not converge (info={info})")
        else:
            raise SolverError(f"unknown solver method {method!r}")
        u[self.interior_idx] = ui
        res = np.linalg.norm(self._K_ii @ ui - rhs)
        rel = res / max(np.linalg.norm(rhs), 1e-300)
        if rel > 1e-8:
            raise SolverError(f"linear solve residual {rel:.3e} above 1e-8")
        return u, rel

    # -- derived quantities --------------------------------------------------

    def energy(self, u: np.ndarray) -> float:
        """Dirichlet energy integral of the P1 interpolant (exact cell quadrature)."""
        return float(u @ (self.K @ u))

    def boundary_flux(self, u: np.ndarray, node_set: np.ndarray) -> float:
        """Consistent flux through the boundary piece marked by ``node_set``.

        Equals the discrete bilinear form against the indicator of the set;
        positive when the field decreases away from a unit-valued boundary
        (so the flux of the unit-potential through its own boundary is its
        energy).
        """
        return float(np.sum((self.K @ u)[node_set]))

    def cell_gradients(self, u: np.ndarray) -> np.ndarray:
        """(M, 2) constant gradient per triangle."""
        tri = self.mesh.triangles
        return np.einsum("mk,mkd->md", u[tri], self.grad_basis)

    def nodal_gradients(self, u: np.ndarray) -> np.ndarray:
        """Patch-recovered gradient at nodes: per node, a least-squares
        linear fit of the adjacent cell gradients sampled at the cell
        centroids (exact for quadratics, hence second order in the
        interior)."""
        g = self.cell_gradients(u)
        tri = self.mesh.triangles
        pts = self.mesh.points
        n = len(pts)
        cent = pts[tri].mean(axis=1)

        # accumulate the 3x3 patch normal equations and right-hand sides
        mom = np.zeros((n, 6))        # 1, dx, dy, dx^2, dxdy, dy^2
        rhs = np.zeros((n, 2, 3))     # per component: g, g dx, g dy
        for k in range(3):
            idx = tri[:, k]
            d = cent - pts[idx]
            cols = np.stack([np.ones(len(tri)), d[:, 0], d[:, 1],
                             d[:, 0] ** 2, d[:, 0] * d[:, 1], d[:, 1] ** 2], axis=1)
            np.add.at(mom, idx, cols)
            samples = np.stack([g, g * d[:, 0:1], g * d[:, 1:2]], axis=2)
            np.add.at(rhs, idx, samples)

        A = np.empty((n, 3, 3))
        A[:, 0, 0] = mom[:, 0]
        A[:, 0, 1] = A[:, 1, 0] = mom[:, 1]
        A[:, 0, 2] = A[:, 2, 0] = mom[:, 2]
        A[:, 1, 1] = mom[:, 3]
        A[:, 1, 2] = A[:, 2, 1] = mom[:, 4]
        A[:, 2, 2] = mom[:, 5]

        out = np.zeros((n, 2))
        # scale-invariant solvability check on the patch moment matrix
        h2 = np.maximum(mom[:, 3] + mom[:, 5], 1e-300)
        det = np.linalg.det(A)
        good = (mom[:, 0] >= 3) & (np.abs(det) > 1e-10 * np.maximum(mom[:, 0], 1.0) * (h2 / 2) ** 2)
        if np.any(good):
            sol = np.linalg.solve(A[good], rhs[good].transpose(0, 2, 1))
            out[good] = sol[:, 0, :]
        if np.any(~good):
            # fallback: plain area-weighted average on degenerate patches
            num = np.zeros((n, 2))
            den = np.zeros(n)
            w = self.tri_area
            for k in range(3):
                np.add.at(num, tri[:, k], g * w[:, None])
                np.add.at(den, tri[:, k], w)
            bad = ~good
            out[bad] = num[bad] / den[bad, None]
        return out


def fem_operator(mesh) -> FemOperator:
    pts = mesh.points
    tri = mesh.triangles
    v0 = pts[tri[:, 0]]
    e1 = pts[tri[:, 1]] - v0
    e2 = pts[tri[:, 2]] - v0
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    area = 0.5 * det
    if np.any(area <= 0):
        raise SolverError("triangulation contains non-positive areas")

    # gradients of barycentric coordinates
    g1 = np.stack([e2[:, 1], -e2[:, 0]], axis=1) / det[:, None]
    g2 = np.stack([-e1[:, 1], e1[:, 0]], axis=1) / det[:, None]
    g0 = -(g1 + g2)
    grad = np.stack([g0, g1, g2], axis=1)           # (M, 3, 2)

    ke = np.einsum("mid,mjd->mij", grad, grad) * area[:, None, None]
    rows = np.repeat(tri, 3, axis=1).reshape(-1)
    cols = np.tile(tri, (1, 3)).reshape(-1)
    K = sp.coo_matrix((ke.reshape(-1), (rows, cols)),
                      shape=(len(pts), len(pts))).tocsr()

    boundary = np.unique(np.concatenate(list(mesh.tags.values())))
    mask = np.ones(len(pts), dtype=bool)
    mask[boundary] = False
    interior = np.nonzero(mask)[0]
    op = FemOperator(mesh=mesh, K=K, tri_area=area, grad_basis=grad,
                     boundary_idx=boundary, interior_idx=interior)
    op._K_ib = K[interior][:, boundary].tocsr()
    op._K_ii = K[interior][:, interior].tocsr()
    return op
