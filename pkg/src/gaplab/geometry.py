"""Inclusion pair geometry: shapes, translation, and the gap profile.

Two convex inclusions touch at the origin in their reference position, the
upper one (index 1) with inner normal along +x_n, the lower one (index 2)
mirrored below.  Near the contact point each boundary is the graph of a C^2
function of the lateral coordinate x', and the gap between the translated
inclusions has width ``eps + h1(x') - h2(x')``.

All geometry values are immutable after construction and safe to share
across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "GeometryError",
    "InclusionShape",
    "PlacedInclusion",
    "OuterDomain",
    "GapGeometry",
    "GapPatch",
    "disc",
    "ball",
    "ellipse",
    "perturbed_disc",
    "outer_disc",
    "outer_rounded_rectangle",
    "translate_pair",
    "gap_width",
    "relative_curvatures",
    "gap_patch",
    "quadratic_gap",
]


class GeometryError(ValueError):
    """Invalid geometric configuration or out-of-domain query."""


def _smooth_cutoff(t):
    """C^3 cutoff: 1 for t <= 0, 0 for t >= 1, 7th-order polynomial between."""
    t = np.clip(t, 0.0, 1.0)
    return 1.0 - t**4 * (35.0 - 84.0 * t + 70.0 * t**2 - 20.0 * t**3)


def _lateral_norm(xp) -> float:
    xp = np.asarray(xp, dtype=float)
    if xp.ndim == 0:
        return abs(float(xp))
    return float(np.linalg.norm(xp))


@dataclass(frozen=True)
class InclusionShape:
    """One convex inclusion in its touching reference position.

    ``side`` is +1 for the upper inclusion (contact boundary is its lower
    arc) and -1 for the lower one.  ``graph(x)`` evaluates the gap-facing
    boundary as x_n = graph(x') near the contact point; for the upper shape
    the graph is >= 0, for the lower one <= 0.
    """

    kind: str                      # "disc" | "ellipse" | "graph-perturbed-disc"
    side: int                      # +1 upper, -1 lower
    dim: int = 2
    radius: float | None = None
    semi_axes: tuple[float, ...] | None = None
    cubic_coeffs: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("disc", "ellipse", "graph-perturbed-disc"):
            raise GeometryError(f"unknown inclusion kind {self.kind!r}")
        if self.side not in (+1, -1):
            raise GeometryError("side must be +1 (upper) or -1 (lower)")
        if self.dim not in (2, 3):
            raise GeometryError("dim must be 2 or 3")
        if self.kind in ("disc", "graph-perturbed-disc"):
            if self.radius is None or self.radius <= 0:
                raise GeometryError("disc needs a positive radius")
        if self.kind == "ellipse":
            if self.semi_axes is None or len(self.semi_axes) != self.dim:
                raise GeometryError("ellipse needs dim semi-axes")
            if any(a <= 0 for a in self.semi_axes):
                raise GeometryError("semi-axes must be positive")
        if self.kind == "graph-perturbed-disc":
            coeffs = self.cubic_coeffs or ()
            want = 1 if self.dim == 2 else 4
            if len(coeffs) > want:
                raise GeometryError(
                    f"expected at most {want} third-order coefficients, got {len(coeffs)}"
                )

    # -- basic scalars -----------------------------------------------------

    @property
    def center(self) -> tuple[float, ...]:
        """Center in the touching position (contact point at the origin)."""
        if self.kind == "ellipse":
            c = self.side * self.semi_axes[-1]
        else:
            c = self.side * self.radius
        if self.dim == 2:
            return (0.0, c)
        return (0.0, 0.0, c)

    @property
    def nominal_radius(self) -> float:
        if self.kind == "ellipse":
            return min(self.semi_axes)
        return self.radius

    @property
    def contact_curvature(self) -> float:
        """d^2 graph / dx^2 at the contact point (isotropic lateral part)."""
        if self.kind == "ellipse":
            a = self.semi_axes[0]
            b = self.semi_axes[-1]
            return b / a**2
        return 1.0 / self.radius

    # -- boundary graph near the contact point -----------------------------

    def _bump(self, xp) -> float:
        if self.kind != "graph-perturbed-disc" or not self.cubic_coeffs:
            return 0.0
        window = _smooth_cutoff(_lateral_norm(xp) / (0.8 * self.radius))
        c = self.cubic_coeffs
        if self.dim == 2:
            x = float(np.asarray(xp).reshape(()))
            cubic = c[0] * x**3
        else:
            x, y = np.asarray(xp, dtype=float).reshape(2)
            cc = tuple(c) + (0.0,) * (4 - len(c))
            cubic = cc[0] * x**3 + cc[1] * x**2 * y + cc[2] * x * y**2 + cc[3] * y**3
        return cubic * float(window)

    def graph(self, xp) -> float:
        """Gap-facing boundary height x_n at lateral position x'."""
        s = _lateral_norm(xp)
        if self.kind == "ellipse":
            a = self.semi_axes[0]
            b = self.semi_axes[-1]
            if self.dim == 3:
                x, y = np.asarray(xp, dtype=float).reshape(2)
                a2 = self.semi_axes[1]
                arg = 1.0 - x**2 / a**2 - y**2 / a2**2
            else:
                arg = 1.0 - s**2 / a**2
            if arg <= 0.0:
                raise GeometryError("lateral point outside graph region of ellipse")
            return self.side * b * (1.0 - math.sqrt(arg))
        if s >= self.radius:
            raise GeometryError("lateral point outside graph region of disc")
        base = self.side * (self.radius - math.sqrt(self.radius**2 - s**2))
        return base + self._bump(xp)

    def graph_dx(self, xp) -> float:
        """d graph / dx (2D only), analytic for discs/ellipses, FD for bumps."""
        x = float(np.asarray(xp).reshape(()))
        if self.kind == "ellipse":
            a = self.semi_axes[0]
            b = self.semi_axes[-1]
            return self.side * b * x / (a**2 * math.sqrt(1.0 - x**2 / a**2))
        base = self.side * x / math.sqrt(self.radius**2 - x**2)
        if self.kind == "disc" or not self.cubic_coeffs:
            return base
        d = 1e-6 * max(self.radius, 1.0)
        return base + (self._bump(x + d) - self._bump(x - d)) / (2 * d)

    def graph_radius(self) -> float:
        """Largest lateral radius on which the boundary stays a graph with |slope| < 1."""
        if self.kind == "ellipse":
            a, b = self.semi_axes[0], self.semi_axes[-1]
            # |h'| = b x / (a^2 sqrt(1 - x^2/a^2)) = 1
            return a / math.sqrt(1.0 + (b / a) ** 2)
        r_unit = self.radius / math.sqrt(2.0)
        if self.kind == "disc" or not self.cubic_coeffs:
            return r_unit
        xs = np.linspace(0.0, 0.99 * self.radius, 400)[1:]
        slopes = np.array([abs(self.graph_dx(x)) for x in xs])
        bad = np.nonzero(slopes >= 1.0)[0]
        return float(xs[bad[0] - 1]) if bad.size else r_unit

    # -- full closed boundary curve (2D meshing support) --------------------

    def boundary_point(self, theta: float) -> np.ndarray:
        """Boundary point at polar angle theta measured from the shape center."""
        if self.dim != 2:
            raise GeometryError("closed boundary curve is 2D only")
        cx, cy = self.center
        if self.kind == "ellipse":
            a, b = self.semi_axes
            p = np.array([cx + a * math.cos(theta), cy + b * math.sin(theta)])
            return p
        p = np.array([cx + self.radius * math.cos(theta),
                      cy + self.radius * math.sin(theta)])
        if self.kind == "graph-perturbed-disc" and self.cubic_coeffs:
            # vertical bump, restricted to the gap-facing arc
            contact = -0.5 * math.pi * self.side
            gamma = abs(_angle_diff(theta, contact))
            sigma = _smooth_cutoff((gamma - 1.05) / 0.40)
            if sigma > 0.0:
                p[1] += self._bump(p[0]) * sigma
        return p

    def contact_angle(self) -> float:
        """Angle (about the center) pointing at the contact point."""
        return -0.5 * math.pi * self.side

    def boundary_tangent(self, theta: float, d: float = 1e-6) -> np.ndarray:
        p1 = self.boundary_point(theta + d)
        p0 = self.boundary_point(theta - d)
        t = (p1 - p0) / (2 * d)
        return t / np.linalg.norm(t)

    def outward_normal(self, theta: float) -> np.ndarray:
        t = self.boundary_tangent(theta)
        n = np.array([t[1], -t[0]])
        # orient away from the center
        c = np.asarray(self.center)
        if np.dot(n, self.boundary_point(theta) - c) < 0:
            n = -n
        return n

    def min_curvature_radius(self) -> float:
        if self.kind == "disc":
            return self.radius
        if self.kind == "ellipse":
            a, b = self.semi_axes
            return min(a, b) ** 2 / max(a, b)
        thetas = np.linspace(0, 2 * math.pi, 181, endpoint=False)
        d = 1e-4
        rmin = math.inf
        for th in thetas:
            p0 = self.boundary_point(th - d)
            p1 = self.boundary_point(th)
            p2 = self.boundary_point(th + d)
            v1 = p1 - p0
            v2 = p2 - p1
            cross = v1[0] * v2[1] - v1[1] * v2[0]
            if abs(cross) < 1e-30:
                continue
            num = np.linalg.norm(v1) * np.linalg.norm(v2) * np.linalg.norm(p2 - p0)
            rmin = min(rmin, num / (2 * abs(cross)))
        return rmin


def _angle_diff(a: float, b: float) -> float:
    return (a - b + math.pi) % (2 * math.pi) - math.pi


def disc(radius: float, side: int) -> InclusionShape:
    return InclusionShape(kind="disc", side=side, radius=radius)


def ball(radius: float, side: int) -> InclusionShape:
    return InclusionShape(kind="disc", side=side, dim=3, radius=radius)


def ellipse(semi_x: float, semi_n: float, side: int) -> InclusionShape:
    """Axis-aligned ellipse with lateral semi-axis semi_x and vertical semi_n."""
    return InclusionShape(kind="ellipse", side=side, semi_axes=(semi_x, semi_n))


def perturbed_disc(radius: float, cubic: Sequence[float], side: int) -> InclusionShape:
    return InclusionShape(
        kind="graph-perturbed-disc", side=side, radius=radius,
        cubic_coeffs=tuple(float(c) for c in cubic),
    )


@dataclass(frozen=True)
class PlacedInclusion:
    """An inclusion shifted by +/- eps/2 along x_n from its touching position."""

    shape: InclusionShape
    dy: float

    @property
    def center(self) -> tuple[float, float]:
        cx, cy = self.shape.center[:2]
        return (cx, cy + self.dy)

    def boundary_point(self, theta: float) -> np.ndarray:
        return self.shape.boundary_point(theta) + np.array([0.0, self.dy])

    def graph(self, x: float) -> float:
        return self.shape.graph(x) + self.dy

    def graph_dx(self, x: float) -> float:
        return self.shape.graph_dx(x)

    def outward_normal(self, theta: float) -> np.ndarray:
        return self.shape.outward_normal(theta)

    def signed_distance(self, p) -> float:
        """Positive outside the inclusion (exact for discs, sampled otherwise)."""
        p = np.asarray(p, dtype=float)
        c = np.asarray(self.center)
        if self.shape.kind == "disc":
            return float(np.linalg.norm(p - c)) - self.shape.radius
        thetas = np.linspace(0, 2 * math.pi, 256, endpoint=False)
        pts = np.array([self.boundary_point(t) for t in thetas])
        d = float(np.min(np.linalg.norm(pts - p, axis=1)))
        if self.shape.kind == "ellipse":
            a, b = self.shape.semi_axes
            inside = ((p[0] - c[0]) / a) ** 2 + ((p[1] - c[1]) / b) ** 2 < 1.0
        else:
            inside = np.linalg.norm(p - c) < self.shape.radius + 2 * abs(self._max_bump())
            if inside:  # refine with the angular ray
                th = math.atan2(p[1] - c[1], p[0] - c[0])
                inside = np.linalg.norm(p - c) < np.linalg.norm(self.boundary_point(th) - c)
        return -d if inside else d

    def _max_bump(self) -> float:
        cc = self.shape.cubic_coeffs or (0.0,)
        return max(abs(c) for c in cc) * self.shape.radius**3


@dataclass(frozen=True)
class OuterDomain:
    """Container domain: disc or rectangle with rounded corners."""

    kind: str                       # "disc" | "ball" | "rectangle-with-rounded-corners"
    parameters: tuple[float, ...]   # disc: (R,); rect: (width, height, corner_radius)
    clearance: float = 0.25

    def __post_init__(self):
        if self.kind not in ("disc", "ball", "rectangle-with-rounded-corners"):
            raise GeometryError(f"unknown outer kind {self.kind!r}")
        if any(p <= 0 for p in self.parameters):
            raise GeometryError("outer parameters must be positive")
        if self.kind == "rectangle-with-rounded-corners":
            w, h, rc = self.parameters
            if 2 * rc > min(w, h):
                raise GeometryError("corner radius too large for rectangle")

    @property
    def perimeter(self) -> float:
        if self.kind in ("disc", "ball"):
            return 2 * math.pi * self.parameters[0]
        w, h, rc = self.parameters
        return 2 * (w - 2 * rc) + 2 * (h - 2 * rc) + 2 * math.pi * rc

    def boundary_point(self, s: float) -> np.ndarray:
        """Point at arclength s along the boundary (counterclockwise)."""
        if self.kind in ("disc", "ball"):
            R = self.parameters[0]
            th = s / R
            return np.array([R * math.cos(th), R * math.sin(th)])
        return _rounded_rect_point(*self.parameters, s)

    def inward_normal(self, s: float) -> np.ndarray:
        d = 1e-6 * self.perimeter
        p1 = self.boundary_point(s + d)
        p0 = self.boundary_point(s - d)
        t = (p1 - p0) / np.linalg.norm(p1 - p0)
        return np.array([-t[1], t[0]]) * -1.0 if _ccw_inward_flip(self, s, t) else np.array([-t[1], t[0]])

    def signed_distance_to_boundary(self, p) -> float:
        """Distance to the boundary, positive inside."""
        p = np.asarray(p, dtype=float)
        if self.kind in ("disc", "ball"):
            return self.parameters[0] - float(np.linalg.norm(p))
        w, h, rc = self.parameters
        qx = abs(p[0]) - (w / 2 - rc)
        qy = abs(p[1]) - (h / 2 - rc)
        outside = math.hypot(max(qx, 0.0), max(qy, 0.0))
        inside = min(max(qx, qy), 0.0)
        return -(outside + inside - rc)

    def contains(self, p) -> bool:
        return self.signed_distance_to_boundary(p) > 0


def _ccw_inward_flip(outer: OuterDomain, s: float, t: np.ndarray) -> bool:
    # left normal of a CCW boundary already points inward
    p = outer.boundary_point(s)
    n = np.array([-t[1], t[0]])
    return outer.signed_distance_to_boundary(p + 1e-6 * n) < 0


def _rounded_rect_point(w: float, h: float, rc: float, s: float) -> np.ndarray:
    """CCW arclength parametrization starting at the middle of the right edge."""
    ex = w / 2 - rc
    ey = h / 2 - rc
    segs = [
        ("line", np.array([w / 2, 0.0]), np.array([0.0, 1.0]), ey),
        ("arc", np.array([ex, ey]), 0.0, math.pi / 2 * rc),
        ("line", np.array([ex, h / 2]), np.array([-1.0, 0.0]), 2 * ex),
        ("arc", np.array([-ex, ey]), math.pi / 2, math.pi / 2 * rc),
        ("line", np.array([-w / 2, ey]), np.array([0.0, -1.0]), 2 * ey),
        ("arc", np.array([-ex, -ey]), math.pi, math.pi / 2 * rc),
        ("line", np.array([-ex, -h / 2]), np.array([1.0, 0.0]), 2 * ex),
        ("arc", np.array([ex, -ey]), 3 * math.pi / 2, math.pi / 2 * rc),
        ("line", np.array([w / 2, -ey]), np.array([0.0, 1.0]), ey),
    ]
    total = sum(seg[-1] for seg in segs)
    s = s % total
    for seg in segs:
        L = seg[-1]
        if s <= L:
            if seg[0] == "line":
                _, p0, d, _ = seg
                return p0 + s * d
            _, c, th0, _ = seg
            th = th0 + s / rc
            return c + rc * np.array([math.cos(th), math.sin(th)])
        s -= L
    return segs[0][1]


def outer_disc(radius: float, clearance: float = 0.25) -> OuterDomain:
    return OuterDomain(kind="disc", parameters=(radius,), clearance=clearance)


def outer_rounded_rectangle(width: float, height: float, corner_radius: float,
                            clearance: float = 0.25) -> OuterDomain:
    return OuterDomain(kind="rectangle-with-rounded-corners",
                       parameters=(width, height, corner_radius),
                       clearance=clearance)


# ---------------------------------------------------------------------------
# translation and the gap profile


def translate_pair(shapes: tuple[InclusionShape, InclusionShape],
                   eps: float) -> tuple[PlacedInclusion, PlacedInclusion]:
    """Shift the touching pair apart by eps along the x_n axis.

    The upper inclusion moves by +eps/2 and the lower one by -eps/2, so the
    minimal boundary distance equals eps for convex shapes touching
    vertically at the origin.
    """
    if eps < 0:
        raise GeometryError("eps must be nonnegative")
    top, bottom = shapes
    if top.side != +1 or bottom.side != -1:
        raise GeometryError("expected (upper, lower) shapes in touching position")
    for sh in shapes:
        if abs(sh.graph(0.0)) > 1e-12 or abs(sh.graph_dx(1e-9)) > 1e-6:
            raise GeometryError("shapes are not tangent to x_n = 0 at the origin")
    return (PlacedInclusion(top, +eps / 2.0), PlacedInclusion(bottom, -eps / 2.0))


def _fd_hessian(fun: Callable, dim: int, scale: float) -> np.ndarray:
    """Second-difference Hessian of the lateral gap profile at the origin."""
    d = 1e-4 * scale
    if dim == 2:
        h = (fun(d) - 2.0 * fun(0.0) + fun(-d)) / d**2
        return np.array([[h]])
    e1 = np.array([d, 0.0])
    e2 = np.array([0.0, d])
    f0 = fun(np.zeros(2))
    hxx = (fun(e1) - 2 * f0 + fun(-e1)) / d**2
    hyy = (fun(e2) - 2 * f0 + fun(-e2)) / d**2
    hxy = (fun(e1 + e2) - fun(e1 - e2) - fun(-e1 + e2) + fun(-e1 - e2)) / (4 * d**2)
    return np.array([[hxx, hxy], [hxy, hyy]])


@dataclass(frozen=True)
class GapGeometry:
    """The near-contact data of a translated pair: graphs, separation, curvatures."""

    n: int
    eps: float
    h1: Callable
    h2: Callable
    R0: float
    lambdas: tuple[float, ...]
    kappa_lb: float
    shapes: tuple[InclusionShape, InclusionShape] | None = None
    h1_dx: Callable | None = None
    h2_dx: Callable | None = None

    def __post_init__(self):
        if self.n not in (2, 3):
            raise GeometryError("n must be 2 or 3")
        if self.eps < 0:
            raise GeometryError("eps must be nonnegative")
        if self.R0 <= 0:
            raise GeometryError("R0 must be positive")
        if self.kappa_lb <= 0:
            raise GeometryError("kappa_lb must be positive")
        if min(self.lambdas) < self.kappa_lb - 1e-9:
            raise GeometryError(
                f"relative curvature {min(self.lambdas):.6g} violates kappa_lb={self.kappa_lb:.6g}"
            )

    @staticmethod
    def from_shapes(top: InclusionShape, bottom: InclusionShape, eps: float,
                    kappa_lb: float | None = None) -> "GapGeometry":
        if top.dim != bottom.dim:
            raise GeometryError("mixed dimensions")
        n = top.dim
        translate_pair((top, bottom), max(eps, 0.0))  # validates tangency / eps
        diff = lambda xp: top.graph(xp) - bottom.graph(xp)
        H = _fd_hessian(diff, n, min(top.nominal_radius, bottom.nominal_radius))
        lambdas = tuple(sorted(np.linalg.eigvalsh(H)))
        R0 = min(
            0.5 * min(top.nominal_radius, bottom.nominal_radius),
            top.graph_radius(),
            bottom.graph_radius(),
        )
        if kappa_lb is None:
            kappa_lb = 0.5 * lambdas[0]
        return GapGeometry(
            n=n, eps=float(eps), h1=top.graph, h2=bottom.graph, R0=R0,
            lambdas=lambdas, kappa_lb=float(kappa_lb), shapes=(top, bottom),
            h1_dx=top.graph_dx if n == 2 else None,
            h2_dx=bottom.graph_dx if n == 2 else None,
        )

    def with_eps(self, eps: float) -> "GapGeometry":
        if eps < 0:
            raise GeometryError("eps must be nonnegative")
        return GapGeometry(n=self.n, eps=float(eps), h1=self.h1, h2=self.h2,
                           R0=self.R0, lambdas=self.lambdas, kappa_lb=self.kappa_lb,
                           shapes=self.shapes, h1_dx=self.h1_dx, h2_dx=self.h2_dx)

    def profile(self, xp) -> float:
        """h1(x') - h2(x'), the eps-independent part of the gap width."""
        return self.h1(xp) - self.h2(xp)

    def width(self, xp, eps: float | None = None) -> float:
        e = self.eps if eps is None else eps
        return e + self.profile(xp)


def gap_width(geom: GapGeometry, xp) -> float:
    """Separation eps + h1(x') - h2(x') between the placed boundaries."""
    if _lateral_norm(xp) > geom.R0 * (1 + 1e-12):
        raise GeometryError("lateral point outside the gap patch radius R0")
    w = geom.width(xp)
    if geom.eps > 0 and not w > 0:
        raise GeometryError("non-positive gap width: invalid geometry")
    return w


def relative_curvatures(geom: GapGeometry) -> np.ndarray:
    """Eigenvalues of the lateral Hessian of h1-h2 at the contact point, ascending."""
    H = _fd_hessian(geom.profile, geom.n, geom.R0)
    lam = np.sort(np.linalg.eigvalsh(H))
    if lam[0] < geom.kappa_lb - 1e-9:
        raise GeometryError(
            f"smallest relative curvature {lam[0]:.6g} below kappa_lb={geom.kappa_lb:.6g}"
        )
    return lam


@dataclass(frozen=True)
class GapPatch:
    """The thin neck region between the boundaries over |x'| < r."""

    geom: GapGeometry
    r: float

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float).reshape(self.geom.n)
        xp, xn = x[:-1], x[-1]
        if self.geom.n == 2:
            xp = float(xp[0])
        if _lateral_norm(xp) >= self.r:
            return False
        lo = -self.geom.eps / 2.0 + self.geom.h2(xp)
        hi = self.geom.eps / 2.0 + self.geom.h1(xp)
        return lo < xn < hi

    @property
    def max_width(self) -> float:
        return self.geom.width(self.r if self.geom.n == 2 else np.array([self.r, 0.0]))


def gap_patch(geom: GapGeometry, r: float) -> GapPatch:
    if not 0 < r <= geom.R0 * (1 + 1e-12):
        raise GeometryError("patch radius must lie in (0, R0]")
    return GapPatch(geom=geom, r=min(r, geom.R0))


def quadratic_gap(lambdas: Sequence[float], R0: float, eps: float = 0.0,
                  cubic: Sequence[float] = ()) -> GapGeometry:
    """Model gap with h1-h2 = sum lambda_j/2 x_j^2 (+ optional odd cubic terms).

    Used for quadrature cross-checks against the explicit antiderivatives.
    """
    lambdas = tuple(float(l) for l in lambdas)
    n = len(lambdas) + 1
    cubic = tuple(float(c) for c in cubic)

    def h1(xp):
        xp = np.atleast_1d(np.asarray(xp, dtype=float))
        quad = 0.5 * sum(l * xp[j] ** 2 for j, l in enumerate(lambdas))
        cub = 0.0
        if cubic:
            if n == 2:
                cub = cubic[0] * xp[0] ** 3
            else:
                cc = cubic + (0.0,) * (4 - len(cubic))
                x, y = xp[0], xp[1]
                cub = cc[0] * x**3 + cc[1] * x**2 * y + cc[2] * x * y**2 + cc[3] * y**3
        return float(quad + cub)

    h2 = lambda xp: 0.0
    return GapGeometry(n=n, eps=float(eps), h1=h1, h2=h2, R0=float(R0),
                       lambdas=lambdas, kappa_lb=0.5 * min(lambdas))
