import math

import numpy as np
import pytest
from dataclasses import replace
from scipy.spatial import cKDTree

from gaplab.field_solver import (BoundaryData, DegenerateSystemError,
                                 GridBudgetError, ResolutionSpec, SolverError,
                                 assemble_flux_system, assemble_u, build_grid,
                                 build_single_inclusion_grid, energy_of,
                                 flux_inclusion, flux_outer, gradient,
                                 max_gradient, nodal_gradient, solve_v0,
                                 solve_vi)
from gaplab.geometry import GapGeometry, PlacedInclusion, disc, outer_disc
from gaplab.oracle import annulus_energy

LIGHT_GRID_TOL = 1e-5   # flux-identity tolerance at the light unit-test budget


# --- grid construction ------------------------------------------------------

def test_grid_invariants(two_disc_bundle):
    grid = two_disc_bundle["grid"]
    assert grid.gap_layers >= 8
    tagged = np.concatenate([grid.tags[t] for t in ("outer", "d1", "d2")])
    assert len(np.unique(tagged)) == len(tagged)
    assert grid.dim == 2
    assert grid.n_nodes > 0


def test_grid_budget_error():
    geom = GapGeometry.from_shapes(disc(1.0, +1), disc(1.0, -1), eps=1e-5)
    spec = replace(ResolutionSpec(), max_nodes=20000)
    with pytest.raises(GridBudgetError, match="infeasible"):
        build_grid(geom, outer_disc(4.0), spec)


def test_eps_floor_at_default_budget():
    geom = GapGeometry.from_shapes(disc(1.0, +1), disc(1.0, -1), eps=5e-6)
    with pytest.raises(GridBudgetError, match="floor"):
        build_grid(geom, outer_disc(4.0))


def test_refinement_halves_max_cell(light_spec):
    geom = GapGeometry.from_shapes(disc(1.0, +1), disc(1.0, -1), eps=1e-2)
    outer = outer_disc(4.0)
    g1 = build_grid(geom, outer, light_spec)
    g2 = build_grid(geom, outer, light_spec.refined(2.0))
    ratio = g1.max_cell / g2.max_cell
    assert 1.6 <= ratio <= 2.4


# --- the annulus oracle case -----------------------------------------------

def test_annulus_solution_matches_exact(annulus_bundle):
    v1, exact = annulus_bundle["v1"], annulus_bundle["exact"]
    assert np.max(np.abs(v1.values - exact)) < 4e-4


def test_annulus_energy(annulus_bundle):
    E = energy_of(annulus_bundle["v1"])
    E_exact = annulus_energy(0.5, 2.0)
    assert abs(E - E_exact) / E_exact < 4e-4


def test_annulus_gradient_matches_exact(annulus_bundle):
    grid = annulus_bundle["grid"]
    v1 = annulus_bundle["v1"]
    g = nodal_gradient(v1)
    pts = grid.mesh.points
    r = np.linalg.norm(pts, axis=1)
    # exact gradient is radial with magnitude 1/(r ln 4)
    interior = (r > 0.6) & (r < 1.8)
    err = np.abs(np.linalg.norm(g[interior], axis=1)
                 - 1.0 / (r[interior] * math.log(4.0)))
    # patch recovery holds the rms error at the h^2 scale of the budget
    assert np.sqrt(np.mean(err**2)) < 1.5e-3
    assert np.max(err) < 1e-2
    collar = (r > 0.52) & (r < 0.62)
    errc = np.abs(np.linalg.norm(g[collar], axis=1)
                  - 1.0 / (r[collar] * math.log(4.0)))
    assert np.max(errc) < 5e-3


def test_maximum_principle(two_disc_bundle, annulus_bundle):
    for f in (two_disc_bundle["v1"], two_disc_bundle["v2"], annulus_bundle["v1"]):
        assert f.values.min() >= -1e-9
        assert f.values.max() <= 1.0 + 1e-9


# --- boundary conditions and symmetry ----------------------------------------

def test_vi_boundary_values_exact(two_disc_bundle):
    grid, v1 = two_disc_bundle["grid"], two_disc_bundle["v1"]
    assert np.all(v1.values[grid.tags["d1"]] == 1.0)
    assert np.all(v1.values[grid.tags["d2"]] == 0.0)
    assert np.all(v1.values[grid.tags["outer"]] == 0.0)


def test_mirror_reflection(two_disc_bundle):
    grid = two_disc_bundle["grid"]
    pts = grid.mesh.points
    d, idx = cKDTree(pts).query(pts * np.array([1.0, -1.0]))
    assert d.max() < 1e-7
    v1, v2 = two_disc_bundle["v1"], two_disc_bundle["v2"]
    assert np.max(np.abs(v2.values[idx] - v1.values)) < 1e-6


def test_v0_zero_data(two_disc_bundle):
    v0 = solve_v0(BoundaryData(lambda x: 0.0, "zero"), two_disc_bundle["grid"])
    assert np.all(v0.values == 0.0)


def test_v0_unit_data_superposition(two_disc_bundle):
    v0, v1, v2 = (two_disc_bundle["v0_one"], two_disc_bundle["v1"],
                  two_disc_bundle["v2"])
    assert np.max(np.abs(v0.values - (1.0 - v1.values - v2.values))) < 1e-10


def test_v0_odd_for_odd_data(two_disc_bundle):
    grid = two_disc_bundle["grid"]
    pts = grid.mesh.points
    _, idx = cKDTree(pts).query(pts * np.array([1.0, -1.0]))
    v0 = two_disc_bundle["v0_lin"]
    assert np.max(np.abs(v0.values[idx] + v0.values)) < 1e-6


def test_boundary_data_must_be_finite(two_disc_bundle):
    bad = BoundaryData(lambda x: float("nan") if x[0] < 0 else 1.0, "bad")
    with pytest.raises(SolverError):
        solve_v0(bad, two_disc_bundle["grid"])


# --- fluxes ------------------------------------------------------------------

def test_flux_equals_energy(two_disc_bundle):
    v1 = two_disc_bundle["v1"]
    f = flux_inclusion(v1, 1)
    assert f > 0
    assert f == pytest.approx(energy_of(v1), rel=1e-12)


def test_flux_reciprocity(two_disc_bundle):
    fs = two_disc_bundle["fs_lin"]
    assert fs.reciprocity_defect / max(abs(fs.a[0, 1]), 1.0) < 1e-10


def test_green_column_sums(two_disc_bundle):
    fs = two_disc_bundle["fs_lin"]
    g1, g2 = fs.green_defect
    assert g1 <= LIGHT_GRID_TOL * abs(fs.a[0, 0])
    assert g2 <= LIGHT_GRID_TOL * abs(fs.a[0, 0])


def test_total_divergence(two_disc_bundle):
    v1 = two_disc_bundle["v1"]
    total = (flux_inclusion(v1, 1) + flux_inclusion(v1, 2) + flux_outer(v1))
    assert abs(total) <= LIGHT_GRID_TOL * abs(flux_inclusion(v1, 1))


def test_outer_flux_of_pair_sum_negative(two_disc_bundle):
    v1, v2 = two_disc_bundle["v1"], two_disc_bundle["v2"]
    assert flux_outer(v1) + flux_outer(v2) < 0


def test_geometric_inclusion_flux_diagnostic(two_disc_bundle):
    v1 = two_disc_bundle["v1"]
    geo = flux_inclusion(v1, 1, method="geometric")
    con = flux_inclusion(v1, 1, method="consistent")
    assert geo == pytest.approx(con, rel=0.05)


# --- flux system and assembled solution --------------------------------------

def test_unit_data_gives_unit_constants(two_disc_bundle):
    fs = two_disc_bundle["fs_one"]
    assert fs.C1 == pytest.approx(1.0, abs=1e-8)
    assert fs.C2 == pytest.approx(1.0, abs=1e-8)


def test_odd_data_gives_antisymmetric_constants(two_disc_bundle):
    fs = two_disc_bundle["fs_lin"]
    assert fs.C1 + fs.C2 == pytest.approx(0.0, abs=1e-6)


def test_degenerate_system_rejected():
    from gaplab.field_solver import solve_flux_constants
    with pytest.raises(DegenerateSystemError):
        solve_flux_constants(np.array([[1.0, 1.0], [1.0, 1.0]]),
                             np.array([0.3, 0.7]))


def test_mixed_grid_rejected(two_disc_bundle, annulus_bundle):
    with pytest.raises(SolverError):
        assemble_flux_system(two_disc_bundle["v1"], two_disc_bundle["v2"],
                             annulus_bundle["v1"])


def test_assembled_solution_boundary_values(two_disc_bundle):
    grid, u, fs = (two_disc_bundle["grid"], two_disc_bundle["u_lin"],
                   two_disc_bundle["fs_lin"])
    pts = grid.mesh.points
    phi = pts[grid.tags["outer"], 1]
    assert np.max(np.abs(u.values[grid.tags["outer"]] - phi)) == 0.0
    assert np.max(np.abs(u.values[grid.tags["d1"]] - fs.C1)) < 1e-14
    assert np.max(np.abs(u.values[grid.tags["d2"]] - fs.C2)) < 1e-14


def test_assembled_solution_max_principle_and_bounds(two_disc_bundle):
    u = two_disc_bundle["u_lin"]
    phi_max = 4.0   # |x_n| <= 4 on the outer circle
    assert u.values.min() >= -phi_max - 1e-9
    assert u.values.max() <= phi_max + 1e-9
    fs = two_disc_bundle["fs_lin"]
    assert abs(fs.C1) + abs(fs.C2) <= 2 * phi_max


def test_assembled_solution_zero_inclusion_flux(two_disc_bundle):
    u = two_disc_bundle["u_lin"]
    for i in (1, 2):
        assert abs(flux_inclusion(u, i)) < 1e-8


def test_unit_data_gives_unit_solution(two_disc_bundle):
    fs, v1, v2, v0 = (two_disc_bundle["fs_one"], two_disc_bundle["v1"],
                      two_disc_bundle["v2"], two_disc_bundle["v0_one"])
    u = assemble_u(fs, v1, v2, v0)
    assert np.max(np.abs(u.values - 1.0)) < 1e-8


# --- gradients and energies ---------------------------------------------------

def test_gradient_of_constant_field_is_zero(two_disc_bundle):
    from gaplab.field_solver import DiscreteField
    grid = two_disc_bundle["grid"]
    c = DiscreteField(grid=grid, values=np.full(grid.n_nodes, 3.7), label="custom")
    assert np.max(np.abs(gradient(c))) < 1e-12
    assert energy_of(c) == pytest.approx(0.0, abs=1e-10)


def test_gap_gradient_scale(light_spec):
    # eps * max |grad v1| stays in a fixed band across eps
    outer = outer_disc(4.0)
    band = []
    for eps in (1e-2, 1e-3):
        geom = GapGeometry.from_shapes(disc(1.0, +1), disc(1.0, -1), eps=eps)
        grid = build_grid(geom, outer, light_spec)
        v1 = solve_vi(1, grid)
        band.append(eps * max_gradient(v1, grid.gap_cells(geom.R0)))
    assert 0.5 <= band[0] <= 2.0 and 0.5 <= band[1] <= 2.0
    assert max(band) / min(band) < 1.5


def test_cg_solver_option(annulus_bundle):
    v_cg = solve_vi(1, annulus_bundle["grid"], method="cg")
    assert np.max(np.abs(v_cg.values - annulus_bundle["v1"].values)) < 1e-8
