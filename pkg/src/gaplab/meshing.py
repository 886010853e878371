"""Boundary-fitted triangulation of the perforated domain.

The mesh is assembled from structured blocks, each fitted exactly to the
curved boundary it touches, stitched through an unstructured graded bulk:

* gap block      -- transfinite quads between the two boundary graphs over
                    |x'| <= x_g, columns graded like sqrt(eps + x^2);
* collar bands   -- normal-offset quads around the non-gap part of each
                    inclusion boundary (full band for a single inclusion);
* outer ring     -- normal-offset band inside the container boundary, used
                    by the one-sided outer flux quadrature;
* bulk           -- Delaunay triangles on graded seeds between the blocks,
                    filtered against the exact block polygons.

Quads are split along their shorter diagonal.  Everything is deterministic
for a fixed spec, and the result is audited: conforming (every edge on a
single triangle joins two like-tagged boundary nodes), positively oriented,
uniquely tagged boundary nodes, and at least the requested number of node
layers across the gap at x' = 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import shapely
from scipy.spatial import Delaunay, cKDTree
from shapely.geometry import Polygon

from .geometry import (GapGeometry, GeometryError, OuterDomain,
                       PlacedInclusion, translate_pair)

__all__ = ["ResolutionSpec", "Mesh", "GridBudgetError", "MeshQualityError",
           "build_pair_mesh", "build_single_mesh"]


class GridBudgetError(RuntimeError):
    """Requested resolution infeasible within the node budget."""


class MeshQualityError(RuntimeError):
    """Mesh failed a conformity or quality audit."""


@dataclass(frozen=True)
class ResolutionSpec:
    """Knobs controlling the graded mesh; ``refined(f)`` scales all of them."""

    n_gap: int = 21            # node layers across the gap at x' = 0
    cx: float = 0.02           # gap column spacing factor: dx ~ cx*sqrt(eps + x^2)
    wall_h: float = 0.0035     # tangential spacing on inclusion walls
    far_h: float = 0.020       # bulk / far-field spacing
    collar_growth: float = 1.30
    collar_width: float = 0.35  # capped by clearance and shape size
    ring_wall_h: float = 0.005  # normal spacing at the outer boundary
    ring_width: float = 0.55
    bulk_slope: float = 0.20    # bulk spacing ramp away from the collars
    max_nodes: int = 2_500_000
    min_gap_layers: int = 8

    def __post_init__(self):
        if self.n_gap < self.min_gap_layers:
            raise GridBudgetError(
                f"n_gap={self.n_gap} below the minimum of {self.min_gap_layers} layers")

    def refined(self, factor: float) -> "ResolutionSpec":
        """Scale every length down / every count up by ``factor``."""
        f = float(factor)
        return replace(
            self,
            n_gap=max(self.min_gap_layers, round(self.n_gap * f)),
            cx=self.cx / f,
            wall_h=self.wall_h / f,
            far_h=self.far_h / f,
            ring_wall_h=self.ring_wall_h / f,
        )

    @property
    def seed_h(self) -> float:
        """Bulk spacing next to the collars; also the collar growth cap."""
        return min(2.8 * self.wall_h, self.far_h)


@dataclass
class Mesh:
    """Triangulation with boundary tags and block metadata."""

    points: np.ndarray          # (N, 2)
    triangles: np.ndarray       # (M, 3), CCW
    tags: dict                  # name -> sorted node index array; names: outer, d1, d2
    ring_lines: np.ndarray      # (n_theta, ring_layers) node ids, [:, 0] on the outer boundary
    ring_depths: np.ndarray     # (ring_layers,) depth of each ring layer
    ring_ds: float              # arclength weight per ring line
    gap_columns: np.ndarray | None   # (ncol,) column x-positions
    gap_nodes: np.ndarray | None     # (ncol, nrow) node ids, row 0 on D2, row -1 on D1
    gap_tris: np.ndarray | None      # triangle ids inside the gap block
    wall_loops: dict                 # tag -> ordered wall node ids (closed loop)
    max_cell: float = 0.0
    gap_layers: int = 0
    spec: ResolutionSpec | None = None

    @property
    def n_nodes(self) -> int:
        return len(self.points)

    def tri_centroids(self) -> np.ndarray:
        return self.points[self.triangles].mean(axis=1)


# ---------------------------------------------------------------------------
# 1D grading helpers


def _gap_column_positions(eps: float, x_g: float, cx: float) -> np.ndarray:
    xs = [0.0]
    while xs[-1] < x_g:
        xs.append(xs[-1] + cx * math.sqrt(eps + xs[-1] ** 2))
        if len(xs) > 200000:
            raise GridBudgetError("gap column marching did not terminate")
    if len(xs) >= 3 and (x_g - xs[-2]) < 0.45 * (xs[-1] - xs[-2]):
        xs.pop()
    xs[-1] = x_g
    pos = np.array(xs[1:])
    return np.concatenate([-pos[::-1], [0.0], pos])


def _marched_offsets(total: float, first: float, growth: float,
                     cap: float) -> np.ndarray:
    """Offsets 0..total: steps start at ``first``, grow geometrically, and
    saturate at ``cap``; the tail is rescaled so the band ends exactly at
    ``total``."""
    first = min(first, total)
    steps = [first]
    while sum(steps) < total:
        steps.append(min(steps[-1] * growth, cap))
        if len(steps) > 100000:
            raise GridBudgetError("offset marching did not terminate")
    over = sum(steps) - total
    if over > 0 and len(steps) > 1 and over > 0.55 * steps[-1]:
        steps.pop()
    arr = np.array(steps)
    arr *= total / arr.sum()
    return np.concatenate([[0.0], np.cumsum(arr)])


# ---------------------------------------------------------------------------
# structured block triangulation


def _split_quads(pts: np.ndarray, grid: np.ndarray, periodic: bool = False):
    """Triangulate a logical (ni, nj) node grid by shorter-diagonal quad splits."""
    ni, nj = grid.shape
    tris = []
    ran_i = range(ni) if periodic else range(ni - 1)
    for i in ran_i:
        i2 = (i + 1) % ni
        for j in range(nj - 1):
            a, b = grid[i, j], grid[i2, j]
            c, d = grid[i2, j + 1], grid[i, j + 1]
            if np.sum((pts[a] - pts[c]) ** 2) <= np.sum((pts[b] - pts[d]) ** 2):
                tris.append((a, b, c))
                tris.append((a, c, d))
            else:
                tris.append((a, b, d))
                tris.append((b, c, d))
    return tris


def _junction_angle(placed: PlacedInclusion, x_target: float) -> float:
    """Boundary angle (about the shape center) where the gap-facing arc has x = x_target."""
    contact = placed.shape.contact_angle()
    if placed.shape.side > 0:
        lo, hi = (contact, contact + math.pi / 2) if x_target > 0 else (contact - math.pi / 2, contact)
    else:
        lo, hi = (contact - math.pi / 2, contact) if x_target > 0 else (contact, contact + math.pi / 2)
    f = lambda th: placed.boundary_point(th)[0] - x_target
    flo, fhi = f(lo), f(hi)
    if flo * fhi > 0:
        raise GeometryError("junction angle bracket failed; gap sector too wide")
    for _ in range(90):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0.0:
            return mid
        if fm * flo <= 0:
            hi = mid
        else:
            lo, flo = mid, fm
    return 0.5 * (lo + hi)


class _Builder:
    def __init__(self):
        self.points: list[np.ndarray] = []
        self.tris: list[tuple] = []
        self.n = 0

    def add_points(self, pts: np.ndarray) -> np.ndarray:
        idx = np.arange(self.n, self.n + len(pts))
        self.points.append(np.asarray(pts, float).reshape(-1, 2))
        self.n += len(pts)
        return idx

    def add_tris(self, tris):
        self.tris.extend(tris)

    def all_points(self) -> np.ndarray:
        return np.vstack(self.points)

    def finish(self):
        return self.all_points(), np.asarray(self.tris, dtype=np.int64)


def _collar_clearance(placed: PlacedInclusion, other: PlacedInclusion | None,
                      outer: OuterDomain, thetas: np.ndarray) -> float:
    pts = np.array([placed.boundary_point(t) for t in thetas])
    clear = min(outer.signed_distance_to_boundary(p) for p in pts)
    if other is not None:
        clear = min(clear, min(other.signed_distance(p) for p in pts))
    return float(clear)


def _resample_polyline(coords: np.ndarray, spacing: float) -> np.ndarray:
    seg = np.linalg.norm(np.diff(coords, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    m = max(8, int(round(total / spacing)))
    si = np.linspace(0.0, total, m, endpoint=False)
    return np.column_stack([np.interp(si, s, coords[:, 0]),
                            np.interp(si, s, coords[:, 1])])


# ---------------------------------------------------------------------------
# public builders


def build_pair_mesh(geom: GapGeometry, outer: OuterDomain,
                    spec: ResolutionSpec) -> Mesh:
    """Mesh the container minus the translated pair, resolving the gap."""
    if geom.n != 2:
        raise GeometryError("direct meshing is 2D only")
    if geom.eps <= 0:
        raise GridBudgetError("direct solves need eps > 0")
    if geom.shapes is None:
        raise GeometryError("geometry carries no shapes to mesh")
    top, bottom = translate_pair(geom.shapes, geom.eps)
    _check_clearance((top, bottom), outer)

    # gap sector extent: boundary slope <= 0.75, at least the patch radius R0
    x_g = min(_slope_radius(s, 0.75) for s in geom.shapes)
    x_g = max(x_g, geom.R0)
    x_g = min(x_g, 0.999 * min(s.graph_radius() for s in geom.shapes))

    cols = _gap_column_positions(geom.eps, x_g, spec.cx)
    n_estimate = _estimate_nodes(geom, outer, spec, cols)
    if n_estimate > spec.max_nodes:
        raise GridBudgetError(
            f"resolution infeasible: ~{n_estimate} nodes exceed the budget of {spec.max_nodes}")

    b = _Builder()

    # --- gap block ---------------------------------------------------------
    nrow = spec.n_gap
    eta1 = np.array([top.graph(x) for x in cols])
    eta2 = np.array([bottom.graph(x) for x in cols])
    s = np.linspace(0.0, 1.0, nrow)
    gap_pts = np.empty((len(cols), nrow, 2))
    gap_pts[:, :, 0] = cols[:, None]
    gap_pts[:, :, 1] = eta2[:, None] * (1 - s)[None, :] + eta1[:, None] * s[None, :]
    gap_ids = b.add_points(gap_pts.reshape(-1, 2)).reshape(len(cols), nrow)
    gap_tri0 = len(b.tris)
    b.add_tris(_split_quads(b.all_points(), gap_ids))
    gap_tris = np.arange(gap_tri0, len(b.tris))

    # --- collars -----------------------------------------------------------
    collar_meta = []
    for placed, other in ((top, bottom), (bottom, top)):
        th_r = _junction_angle(placed, +x_g)
        th_l = _junction_angle(placed, -x_g)
        contact = placed.shape.contact_angle()
        a, c = sorted((th_r, th_l))
        if _in_sector(contact, a, c):
            th_a, th_b = c, a + 2 * math.pi
        else:
            th_a, th_b = a, c
        r_nom = placed.shape.nominal_radius
        n_th = max(12, int(math.ceil((th_b - th_a) * r_nom / spec.wall_h)))
        thetas = np.linspace(th_a, th_b, n_th + 1)
        clear = _collar_clearance(placed, other, outer, thetas)
        w_c = min(spec.collar_width, 0.35 * r_nom, 0.45 * clear)
        offsets = _marched_offsets(w_c, 0.45 * spec.wall_h,
                                   spec.collar_growth, spec.seed_h)
        wall = np.array([placed.boundary_point(t) for t in thetas])
        normal = np.array([placed.outward_normal(t) for t in thetas])
        pts = wall[:, None, :] + offsets[None, :, None] * normal[:, None, :]
        ids = b.add_points(pts.reshape(-1, 2)).reshape(len(thetas), len(offsets))
        b.add_tris(_split_quads(b.all_points(), ids))
        starts_right = wall[0, 0] > 0
        collar_meta.append({"ids": ids, "placed": placed,
                            "starts_right": starts_right})

    # --- outer ring ---------------------------------------------------------
    clear_outer = min(
        _collar_clearance(p, None, outer,
                          np.linspace(0, 2 * math.pi, 128, endpoint=False))
        for p in (top, bottom))
    ring_ids, ring_depths, ring_ds = _build_ring(b, outer, spec, clear_outer)

    # --- bulk ----------------------------------------------------------------
    peanut_ids = _pair_peanut_ids(gap_ids, collar_meta)
    _build_bulk(b, peanut_ids, ring_ids, spec)

    wall_loops = {
        "d1": _wall_loop(gap_ids[:, -1], collar_meta[0]),
        "d2": _wall_loop(gap_ids[:, 0], collar_meta[1]),
    }
    return _finalize(b, spec, gap_cols=cols, gap_ids=gap_ids, gap_tris=gap_tris,
                     collar_meta=collar_meta, ring_ids=ring_ids,
                     ring_depths=ring_depths, ring_ds=ring_ds,
                     wall_loops=wall_loops)


def build_single_mesh(placed: PlacedInclusion, outer: OuterDomain,
                      spec: ResolutionSpec) -> Mesh:
    """Mesh the container minus a single inclusion (annulus-type domains)."""
    _check_clearance((placed,), outer)
    b = _Builder()
    r_nom = placed.shape.nominal_radius
    n_theta = max(16, int(round(2 * math.pi * r_nom / spec.wall_h)))
    thetas = np.linspace(0, 2 * math.pi, n_theta, endpoint=False)
    clear = _collar_clearance(placed, None, outer, thetas)
    w_c = min(spec.collar_width, 0.35 * r_nom, 0.6 * clear)
    offsets = _marched_offsets(w_c, 0.45 * spec.wall_h,
                               spec.collar_growth, spec.seed_h)
    wall = np.array([placed.boundary_point(t) for t in thetas])
    normal = np.array([placed.outward_normal(t) for t in thetas])
    pts = wall[:, None, :] + offsets[None, :, None] * normal[:, None, :]
    ids = b.add_points(pts.reshape(-1, 2)).reshape(n_theta, len(offsets))
    b.add_tris(_split_quads(b.all_points(), ids, periodic=True))

    ring_ids, ring_depths, ring_ds = _build_ring(b, outer, spec, clear)
    _build_bulk(b, ids[:, -1], ring_ids, spec)

    wall_loops = {"d1": ids[:, 0]}
    return _finalize(b, spec, gap_cols=None, gap_ids=None, gap_tris=None,
                     collar_meta=[{"ids": ids, "placed": placed}],
                     ring_ids=ring_ids, ring_depths=ring_depths,
                     ring_ds=ring_ds, wall_loops=wall_loops)


# ---------------------------------------------------------------------------
# internals


def _slope_radius(shape, cap: float) -> float:
    hi = 0.999 * shape.graph_radius()
    if abs(shape.graph_dx(hi)) <= cap:
        return hi
    lo = 0.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if abs(shape.graph_dx(mid)) < cap:
            lo = mid
        else:
            hi = mid
    return lo


def _in_sector(angle: float, a: float, b: float) -> bool:
    span = (b - a) % (2 * math.pi)
    off = (angle - a) % (2 * math.pi)
    return off <= span


def _check_clearance(placed_list, outer: OuterDomain):
    for p in placed_list:
        thetas = np.linspace(0, 2 * math.pi, 128, endpoint=False)
        d = min(outer.signed_distance_to_boundary(p.boundary_point(t)) for t in thetas)
        if d < outer.clearance:
            raise GeometryError(
                f"inclusion clearance {d:.4g} below required {outer.clearance}")


def _estimate_nodes(geom, outer, spec, cols) -> int:
    n_gap_nodes = len(cols) * spec.n_gap
    r_nom = min(s.nominal_radius for s in geom.shapes)
    n_collar = 2 * int(5.5 * r_nom / spec.wall_h + 40) * 24
    n_ring = (int(outer.perimeter / (0.9 * spec.far_h)) + 1) * (
        int(spec.ring_width / (0.9 * spec.far_h)) + 6)
    approx_area = outer.perimeter ** 2 / (4 * math.pi)
    n_bulk = int(1.05 * approx_area / (0.866 * spec.far_h ** 2))
    return n_gap_nodes + n_collar + n_ring + n_bulk


def _build_ring(b: _Builder, outer: OuterDomain, spec: ResolutionSpec,
                clearance: float):
    P = outer.perimeter
    n_theta = max(32, int(round(P / (0.9 * spec.far_h))))
    ss = np.linspace(0.0, P, n_theta, endpoint=False)
    width = min(spec.ring_width, 0.6 * clearance)
    depths = _marched_offsets(width, spec.ring_wall_h, 1.45,
                              0.9 * spec.far_h)
    bpts = np.array([outer.boundary_point(s) for s in ss])
    nrm = np.array([outer.inward_normal(s) for s in ss])
    pts = bpts[:, None, :] + depths[None, :, None] * nrm[:, None, :]
    ids = b.add_points(pts.reshape(-1, 2)).reshape(n_theta, len(depths))
    b.add_tris(_split_quads(b.all_points(), ids, periodic=True))
    return ids, depths, P / n_theta


def _wall_loop(gap_row: np.ndarray, meta: dict) -> np.ndarray:
    """Ordered closed loop of wall nodes: gap row left->right, collar back."""
    ids = meta["ids"]
    collar_wall = ids[:, 0] if meta["starts_right"] else ids[::-1, 0]
    # collar_wall runs right junction -> left junction the long way round
    return np.concatenate([gap_row, collar_wall[1:-1]])


def _pair_peanut_ids(gap_ids: np.ndarray, collar_meta: list) -> np.ndarray:
    """Closed polyline (node ids) around gap block + both collars."""
    c1, c2 = collar_meta
    C1 = c1["ids"] if c1["starts_right"] else c1["ids"][::-1]
    C2 = c2["ids"] if c2["starts_right"] else c2["ids"][::-1]
    # C*: theta index 0 at the right junction, -1 at the left junction
    loop: list[int] = []
    loop.extend(C1[:, -1])              # collar-1 outer edge, right -> left
    loop.extend(C1[-1, ::-1][1:])       # collar-1 left end edge, outer -> wall
    loop.extend(gap_ids[0, ::-1][1:])   # gap left side edge, top -> bottom
    loop.extend(C2[-1, :][1:])          # collar-2 left end edge, wall -> outer
    loop.extend(C2[::-1, -1][1:])       # collar-2 outer edge, left -> right
    loop.extend(C2[0, ::-1][1:])        # collar-2 right end edge, outer -> wall
    loop.extend(gap_ids[-1, :][1:])     # gap right side edge, bottom -> top
    loop.extend(C1[0, :][1:])           # collar-1 right end edge, wall -> outer
    if loop[-1] == loop[0]:
        loop.pop()
    return np.asarray(loop, dtype=np.int64)


def _build_bulk(b: _Builder, hole_loop_ids: np.ndarray, ring_ids: np.ndarray,
                spec: ResolutionSpec):
    pts = b.all_points()
    hole_coords = pts[hole_loop_ids]
    shell_ids = ring_ids[:, -1]
    shell = pts[shell_ids]
    hole_poly = Polygon(hole_coords)
    if not hole_poly.is_valid:
        hole_poly = hole_poly.buffer(0)
    shell_poly = Polygon(shell)
    if not hole_poly.within(shell_poly):
        raise GeometryError("outer ring band overlaps the inclusion region")
    bulk_poly = Polygon(shell, [hole_coords[::-1]])
    if not bulk_poly.is_valid:
        bulk_poly = bulk_poly.buffer(0)

    # graded offset rings marching away from the hole; seeds are generated
    # in the upper half plane and mirrored so mirror-symmetric domains get
    # exactly mirror-symmetric node sets
    h_near = spec.seed_h
    seeds = []
    d, h = h_near, h_near
    while h < spec.far_h * 0.999:
        off = hole_poly.buffer(d, quad_segs=12)
        ring = _resample_polyline(np.asarray(off.exterior.coords), h)
        seeds.append(_mirror_symmetrize(ring, h))
        h = min(spec.far_h, h_near + spec.bulk_slope * d)
        d += h
    graded = np.vstack(seeds) if seeds else np.empty((0, 2))

    # hex lattice at the far spacing, rows mirrored about y = 0
    minx, miny, maxx, maxy = bulk_poly.bounds
    hx = spec.far_h
    dy = 0.866 * hx
    n_up = int(max(maxy, -miny) / dy) + 2
    ys_up = dy * (np.arange(n_up) + 0.5)
    xs = np.arange(minx, maxx + hx, hx)
    rows = []
    for m, y in enumerate(ys_up):
        xr = xs + (m % 2) * hx / 2
        rows.append(np.column_stack([xr, np.full_like(xr, y)]))
        rows.append(np.column_stack([xr, np.full_like(xr, -y)]))
    hexpts = np.vstack(rows)

    interface = np.vstack([hole_coords, shell])
    keep_graded = _filter_seeds(graded, bulk_poly, interface, 0.55 * h_near)
    anchors = np.vstack([interface, keep_graded]) if len(keep_graded) else interface
    keep_hex = _filter_seeds(hexpts, bulk_poly, anchors, 0.62 * spec.far_h)

    new_pts = (np.vstack([keep_graded, keep_hex])
               if len(keep_graded) + len(keep_hex) else np.empty((0, 2)))
    new_ids = b.add_points(new_pts) if len(new_pts) else np.empty(0, dtype=np.int64)
    glob = np.concatenate([hole_loop_ids, shell_ids, new_ids])
    dela_pts = np.vstack([interface, new_pts])

    tri = Delaunay(dela_pts)
    cent = dela_pts[tri.simplices].mean(axis=1)
    shapely.prepare(bulk_poly)
    keep = shapely.contains_xy(bulk_poly, cent[:, 0], cent[:, 1])
    b.add_tris([tuple(glob[t]) for t in tri.simplices[keep]])


def _mirror_symmetrize(pts: np.ndarray, h: float) -> np.ndarray:
    """Replace a point set by upper-half points, their mirror images, and
    thinned on-axis points; the result is exactly symmetric in y."""
    band = 0.35 * h
    up = pts[pts[:, 1] > band]
    ax = pts[np.abs(pts[:, 1]) <= band]
    rows = [up, up * np.array([1.0, -1.0])]
    if len(ax):
        x = np.sort(ax[:, 0])
        kept = [x[0]]
        for v in x[1:]:
            if v - kept[-1] >= 0.7 * h:
                kept.append(v)
        rows.append(np.column_stack([kept, np.zeros(len(kept))]))
    return np.vstack(rows)


def _filter_seeds(cand: np.ndarray, bulk_poly, anchors: np.ndarray,
                  min_dist: float) -> np.ndarray:
    if len(cand) == 0:
        return cand
    shapely.prepare(bulk_poly)
    inside = shapely.contains_xy(bulk_poly, cand[:, 0], cand[:, 1])
    cand = cand[inside]
    if len(cand) == 0:
        return cand
    bnd = shapely.boundary(bulk_poly)
    dbnd = shapely.distance(shapely.points(cand), bnd)
    cand = cand[dbnd > min_dist]
    if len(cand) == 0 or len(anchors) == 0:
        return cand
    d, _ = cKDTree(anchors).query(cand)
    return cand[d > min_dist]


# ---------------------------------------------------------------------------
# merge, tags, audits


def _root(remap, i):
    while remap[i] != i:
        remap[i] = remap[remap[i]]
        i = remap[i]
    return i


def _finalize(b: _Builder, spec: ResolutionSpec, *, gap_cols, gap_ids, gap_tris,
              collar_meta, ring_ids, ring_depths, ring_ds, wall_loops) -> Mesh:
    points, tris = b.finish()
    if len(points) > spec.max_nodes:
        raise GridBudgetError(
            f"resolution infeasible: {len(points)} nodes exceed the budget of {spec.max_nodes}")

    # merge coincident nodes (block corners shared between gap and collars)
    pairs = cKDTree(points).query_pairs(1e-9, output_type="ndarray")
    remap = np.arange(len(points))
    for a, c in pairs:
        ra, rc = _root(remap, a), _root(remap, c)
        if ra != rc:
            remap[max(ra, rc)] = min(ra, rc)
    for i in range(len(remap)):
        remap[i] = _root(remap, i)
    used = np.unique(remap)
    new_index = -np.ones(len(points), dtype=np.int64)
    new_index[used] = np.arange(len(used))
    final_map = new_index[remap]
    points = points[used]
    tris = final_map[tris]

    # orientation and degeneracy
    v1 = points[tris[:, 1]] - points[tris[:, 0]]
    v2 = points[tris[:, 2]] - points[tris[:, 0]]
    area2 = v1[:, 0] * v2[:, 1] - v1[:, 1] * v2[:, 0]
    if np.any(np.abs(area2) < 1e-16):
        raise MeshQualityError("degenerate triangle produced")
    flip = area2 < 0
    tris[flip] = tris[flip][:, ::-1]

    tags = {"outer": np.unique(final_map[ring_ids[:, 0]])}
    if gap_ids is not None:
        tags["d1"] = np.unique(np.concatenate([
            final_map[gap_ids[:, -1]], final_map[collar_meta[0]["ids"][:, 0]]]))
        tags["d2"] = np.unique(np.concatenate([
            final_map[gap_ids[:, 0]], final_map[collar_meta[1]["ids"][:, 0]]]))
    else:
        tags["d1"] = np.unique(final_map[collar_meta[0]["ids"][:, 0]])

    _audit(points, tris, tags)

    # exact area bookkeeping: triangles must tile the polygonal domain
    tri_area = 0.5 * np.abs(area2).sum()
    outer_loop = final_map[ring_ids[:, 0]]
    expected = abs(_shoelace(points[outer_loop]))
    for loop in wall_loops.values():
        expected -= abs(_shoelace(points[final_map[loop]]))
    if abs(tri_area - expected) > 1e-9 * expected:
        raise MeshQualityError(
            f"mesh area {tri_area:.12g} != domain area {expected:.12g}: "
            "overlapping or missing triangles")

    seg = points[tris][:, [1, 2, 0], :] - points[tris]
    max_cell = float(np.max(np.linalg.norm(seg, axis=2)))

    return Mesh(
        points=points,
        triangles=tris,
        tags=tags,
        ring_lines=final_map[ring_ids],
        ring_depths=np.asarray(ring_depths),
        ring_ds=ring_ds,
        gap_columns=gap_cols,
        gap_nodes=None if gap_ids is None else final_map[gap_ids],
        gap_tris=gap_tris,
        wall_loops={k: final_map[v] for k, v in wall_loops.items()},
        max_cell=max_cell,
        gap_layers=0 if gap_ids is None else gap_ids.shape[1],
        spec=spec,
    )


def _shoelace(loop_pts: np.ndarray) -> float:
    x, y = loop_pts[:, 0], loop_pts[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _audit(points: np.ndarray, tris: np.ndarray, tags: dict):
    all_tagged = np.concatenate(list(tags.values()))
    if len(np.unique(all_tagged)) != len(all_tagged):
        raise MeshQualityError("a boundary node carries more than one tag")
    edges = np.sort(tris[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    e = edges[order]
    new = np.concatenate([[True], np.any(e[1:] != e[:-1], axis=1)])
    uniq_ids = np.cumsum(new) - 1
    cnt = np.bincount(uniq_ids)
    if np.any(cnt > 2):
        raise MeshQualityError("non-manifold edge: overlapping triangles")
    boundary_edges = e[new][cnt == 1]
    tag_id = -np.ones(len(points), dtype=int)
    for k, idx in enumerate(tags.values()):
        tag_id[idx] = k
    t0 = tag_id[boundary_edges[:, 0]]
    t1 = tag_id[boundary_edges[:, 1]]
    ok = (t0 >= 0) & (t0 == t1)
    if not np.all(ok):
        bad = boundary_edges[~ok][:5]
        raise MeshQualityError(f"hole or mismatched interface at edges {bad.tolist()}")
