"""Independent closed-form and extrapolation references for solver validation.

The annulus potential is the one geometry in scope with an exact solution;
Richardson extrapolation over grid refinements supplies reference values
everywhere else; mirror symmetry supplies exact relations for symmetric
configurations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "OracleError",
    "OracleCase",
    "annulus_exact",
    "annulus_energy",
    "refine_oracle",
    "RefinementEstimate",
    "symmetry_oracle",
    "SymmetryRelation",
]


class OracleError(ValueError):
    pass


@dataclass(frozen=True)
class OracleCase:
    """A named closed-form evaluator with its applicability predicate."""

    name: str
    evaluator: Callable
    applies_to: Callable


def annulus_exact(r_in: float, r_out: float, x, dim: int = 2) -> float:
    """Harmonic potential in an annulus, 1 on the inner boundary, 0 on the outer.

    2D: ln(|x|/R)/ln(r/R);  3D: (1/|x| - 1/R)/(1/r - 1/R).
    """
    if not 0 < r_in < r_out:
        raise OracleError("need 0 < r_in < r_out")
    r = float(np.linalg.norm(np.atleast_1d(np.asarray(x, dtype=float))))
    if not r_in - 1e-12 <= r <= r_out + 1e-12:
        raise OracleError(f"|x|={r:.6g} outside the annulus [{r_in}, {r_out}]")
    if dim == 2:
        return math.log(r / r_out) / math.log(r_in / r_out)
    if dim == 3:
        return (1.0 / r - 1.0 / r_out) / (1.0 / r_in - 1.0 / r_out)
    raise OracleError("dim must be 2 or 3")


def annulus_gradient_magnitude(r_in: float, r_out: float, r: float) -> float:
    """|grad| of the 2D annulus potential at radius r."""
    return 1.0 / (r * math.log(r_out / r_in))


def annulus_energy(r_in: float, r_out: float, dim: int = 2) -> float:
    """Dirichlet energy of the annulus potential (condenser capacity)."""
    if not 0 < r_in < r_out:
        raise OracleError("need 0 < r_in < r_out")
    if dim == 2:
        return 2.0 * math.pi / math.log(r_out / r_in)
    if dim == 3:
        return 4.0 * math.pi / (1.0 / r_in - 1.0 / r_out)
    raise OracleError("dim must be 2 or 3")


@dataclass(frozen=True)
class RefinementEstimate:
    """Richardson-extrapolated limit of a refinement sequence."""

    value: float
    error_estimate: float
    observed_order: float | None
    values: tuple[float, ...]
    monotone: bool


def refine_oracle(problem: Callable[[int], float], levels: int = 3,
                  ratio: float = 2.0, order: float = 2.0) -> RefinementEstimate:
    """Fine-grid reference via Richardson extrapolation.

    ``problem(level)`` must return the quantity of interest at refinement
    level 0..levels-1, with the mesh scale shrinking by ``ratio`` per level.
    Assumes convergence at the given order; the observed order from the
    last three levels and an error estimate are reported, and non-monotone
    sequences are flagged rather than rejected.
    """
    if levels < 2:
        raise OracleError("need at least 2 refinement levels")
    vals = [float(problem(k)) for k in range(levels)]
    diffs = np.diff(vals)
    monotone = bool(np.all(diffs > 0) or np.all(diffs < 0) or np.allclose(diffs, 0))
    fac = ratio**order
    extrap = vals[-1] + (vals[-1] - vals[-2]) / (fac - 1.0)
    err = abs(vals[-1] - extrap)
    obs = None
    if levels >= 3:
        num = vals[-2] - vals[-3]
        den = vals[-1] - vals[-2]
        if abs(den) > 1e-300 and num / den > 0:
            obs = math.log(abs(num / den)) / math.log(ratio)
    return RefinementEstimate(value=float(extrap), error_estimate=float(err),
                              observed_order=obs, values=tuple(vals),
                              monotone=monotone)


@dataclass(frozen=True)
class SymmetryRelation:
    name: str
    description: str


def _phi_parity(phi: Callable, samples: np.ndarray) -> str:
    up = np.array([phi(p) for p in samples])
    dn = np.array([phi(p * np.array([1.0, -1.0])) for p in samples])
    scale = max(np.max(np.abs(up)), 1e-12)
    if np.max(np.abs(up - dn)) < 1e-10 * scale:
        return "even"
    if np.max(np.abs(up + dn)) < 1e-10 * scale:
        return "odd"
    return "none"


def symmetry_oracle(geom, phi: Callable | None = None,
                    sample_radius: float = 1.0) -> list[SymmetryRelation]:
    """Exact relations implied by mirror symmetry in x_n.

    Requires a geometry whose two inclusions are mirror images; emits the
    reflection relation for the pair potentials and, when boundary data is
    supplied, the parity consequences for the assembled solution and its
    boundary constants.
    """
    shapes = getattr(geom, "shapes", None)
    if shapes is None:
        raise OracleError("geometry carries no shapes")
    top, bottom = shapes
    if (top.kind, top.radius, top.semi_axes, top.cubic_coeffs) != (
            bottom.kind, bottom.radius, bottom.semi_axes, bottom.cubic_coeffs):
        raise OracleError("geometry is not mirror symmetric")
    rels = [SymmetryRelation(
        "reflection", "v2(x', -x_n) = v1(x', x_n) at every node")]
    if phi is None:
        return rels
    rng = np.random.default_rng(0)
    ang = rng.uniform(0, 2 * math.pi, 32)
    samples = sample_radius * np.column_stack([np.cos(ang), np.sin(ang)])
    parity = _phi_parity(phi, samples)
    if parity == "odd":
        rels.append(SymmetryRelation("odd-data", "u(x', -x_n) = -u(x', x_n)"))
        rels.append(SymmetryRelation("antisymmetric-constants", "C1 = -C2"))
    elif parity == "even":
        rels.append(SymmetryRelation("even-data", "u(x', -x_n) = u(x', x_n)"))
        rels.append(SymmetryRelation("equal-constants", "C1 = C2 (no blow-up term)"))
    return rels
