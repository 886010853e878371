"""The explicit gap profile, the leading singular term, and residual studies.

The auxiliary profile is linear across the gap: value (x_n - h2 + eps/2) /
(eps + h1 - h2) inside the patch, blended to a smooth bounded extension
outside; its vertical derivative is exactly the reciprocal gap width.  The
leading singular term of the full gradient is a dimension-dependent
prefactor times the profile gradient; what remains after subtracting it is
expected to stay bounded along the eps sweep while the gradient itself
blows up.

Pure evaluation; parallel across sample points and sweep entries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .field_solver import DiscreteField, gradient
from .functionals import LimitConstants
from .geometry import GapGeometry

__all__ = [
    "ReconstructionError", "SingularTerm", "BlowupFit",
    "ubar", "ubar_grad", "singular_term", "singular_prefactor",
    "residual_norms", "blowup_rate_fit",
]


class ReconstructionError(ValueError):
    pass


def _smoothstep(t: float) -> tuple[float, float]:
    """C^2 step 1 -> 0 on t in [0, 1] and its derivative."""
    if t <= 0.0:
        return 1.0, 0.0
    if t >= 1.0:
        return 0.0, 0.0
    s = t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
    ds = 30.0 * t * t * (1.0 - t) ** 2
    return 1.0 - s, -ds


def _h_dx(geom: GapGeometry, which: int, x: float) -> float:
    fn = geom.h1_dx if which == 1 else geom.h2_dx
    if fn is not None:
        return fn(x)
    h = geom.h1 if which == 1 else geom.h2
    d = 1e-6 * max(geom.R0, 1.0)
    return (h(x + d) - h(x - d)) / (2 * d)


def ubar(geom: GapGeometry, x) -> float:
    """Linear-across-the-gap profile; 1 on the upper wall, 0 on the lower.

    Exact inside |x'| <= R0/2, blended by a C^2 cutoff to the constant 1/2
    between R0/2 and R0, constant beyond (any smooth bounded extension is
    admissible outside the patch).
    """
    if geom.n != 2:
        raise ReconstructionError("profile evaluation is 2D here")
    xp, xn = float(x[0]), float(x[1])
    r = abs(xp)
    psi, _ = _smoothstep((r - geom.R0 / 2) / (geom.R0 / 2))
    if psi == 0.0:
        return 0.5
    delta = geom.width(xp)
    core = (xn - geom.h2(xp) + geom.eps / 2.0) / delta
    return psi * core + (1.0 - psi) * 0.5


def ubar_grad(geom: GapGeometry, x) -> np.ndarray:
    """Gradient of the profile; the vertical component is 1/width exactly
    inside the patch core."""
    if geom.n != 2:
        raise ReconstructionError("profile evaluation is 2D here")
    xp, xn = float(x[0]), float(x[1])
    r = abs(xp)
    half = geom.R0 / 2
    psi, dpsi = _smoothstep((r - half) / half)
    if psi == 0.0:
        return np.array([0.0, 0.0])
    delta = geom.width(xp)
    num = xn - geom.h2(xp) + geom.eps / 2.0
    core = num / delta
    d1 = _h_dx(geom, 1, xp)
    d2 = _h_dx(geom, 2, xp)
    core_x = (-d2 * delta - num * (d1 - d2)) / delta**2
    core_y = 1.0 / delta
    sgn = math.copysign(1.0, xp) if xp != 0 else 0.0
    gx = psi * core_x + dpsi / half * sgn * (core - 0.5)
    gy = psi * core_y
    return np.array([gx, gy])


@dataclass(frozen=True)
class SingularTerm:
    """Leading term of the gradient: prefactor times the profile gradient."""

    n: int
    prefactor: float
    geom: GapGeometry

    def __call__(self, x) -> np.ndarray:
        return self.prefactor * ubar_grad(self.geom, x)


def profile_cell_gradients(geom: GapGeometry, grid,
                           cells: np.ndarray) -> np.ndarray:
    """Cell gradients of the interpolated profile over the given cells.

    Comparing discrete gradients against the interpolated profile (rather
    than pointwise profile gradients) removes the interpolation-curvature
    artifact of the steep profile, which would otherwise grow like the
    blow-up scale and mask the bounded remainder.
    """
    tri = grid.mesh.triangles[cells]
    need = np.unique(tri)
    vals = np.zeros(len(grid.mesh.points))
    vals[need] = [ubar(geom, grid.mesh.points[i]) for i in need]
    return np.einsum("mk,mkd->md", vals[tri], grid.op.grad_basis[cells])


def singular_prefactor(limits: LimitConstants, n: int, eps: float) -> float:
    if n == 2:
        return limits.Q_star * math.sqrt(eps) / limits.Theta_star
    if n == 3:
        return (limits.Q_star / limits.Theta_star
                / (abs(math.log(eps)) - limits.Mtilde))
    raise ReconstructionError("n must be 2 or 3")


def singular_term(limits: LimitConstants, geom: GapGeometry, eps: float,
                  x=None) -> SingularTerm | np.ndarray:
    """The singular gradient term; evaluated at x when given, else returned
    as a callable object.  Identically zero when the coupling vanishes."""
    pref = singular_prefactor(limits, geom.n, eps)
    term = SingularTerm(n=geom.n, prefactor=pref, geom=geom)
    if x is None:
        return term
    return term(x)


def residual_norms(u_field: DiscreteField, term: SingularTerm,
                   cells: np.ndarray) -> tuple[float, float]:
    """(max |grad u - term|, max |grad u|) over the given cells.

    The term is evaluated through the interpolated profile so the
    comparison lives in the discrete space; with a vanishing prefactor the
    two norms coincide exactly.
    """
    g = gradient(u_field)[cells]
    S = term.prefactor * profile_cell_gradients(term.geom, u_field.grid, cells)
    res = np.linalg.norm(g - S, axis=1)
    mag = np.linalg.norm(g, axis=1)
    return float(np.max(res)), float(np.max(mag))


@dataclass(frozen=True)
class BlowupFit:
    slope: float | None
    ci95: float | None
    refused: bool = False
    reason: str = ""


def blowup_rate_fit(eps_values, max_grads, *, q_star: float | None = None,
                    q_noise: float = 1e-9) -> BlowupFit:
    """Log-log slope of the gap gradient maximum against eps.

    Refuses when the coupling constant is indistinguishable from zero
    (no blow-up expected then) or with fewer than 4 sweep points.
    """
    eps = np.asarray(eps_values, dtype=float)
    g = np.asarray(max_grads, dtype=float)
    if q_star is not None and abs(q_star) <= q_noise:
        return BlowupFit(slope=None, ci95=None, refused=True,
                         reason="coupling constant indistinguishable from zero; "
                                "no blow-up expected")
    if len(eps) < 4:
        return BlowupFit(slope=None, ci95=None, refused=True,
                         reason="need at least 4 sweep points")
    if np.any(eps <= 0) or np.any(g <= 0):
        raise ReconstructionError("eps and gradient maxima must be positive")
    X = np.column_stack([np.log(eps), np.ones_like(eps)])
    y = np.log(g)
    coef, res, _, _ = np.linalg.lstsq(X, y, rcond=None)
    dof = max(len(eps) - 2, 1)
    rss = float(res[0]) if res.size else float(np.sum((y - X @ coef) ** 2))
    sxx = float(np.sum((X[:, 0] - X[:, 0].mean()) ** 2))
    se = math.sqrt(rss / dof / sxx) if sxx > 0 else float("inf")
    return BlowupFit(slope=float(coef[0]), ci95=1.96 * se)
