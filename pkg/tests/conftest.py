import numpy as np
import pytest
from dataclasses import replace

from gaplab.geometry import GapGeometry, PlacedInclusion, disc, outer_disc
from gaplab.field_solver import (BoundaryData, ResolutionSpec, assemble_flux_system,
                                 assemble_u, build_grid,
                                 build_single_inclusion_grid, solve_v0, solve_vi)


# light budget for unit tests; acceptance tests use the package defaults
LIGHT_SPEC = replace(ResolutionSpec(), wall_h=0.007, far_h=0.04, cx=0.05, n_gap=13)


@pytest.fixture(scope="session")
def light_spec():
    return LIGHT_SPEC


@pytest.fixture(scope="session")
def two_disc_bundle():
    """Two unit discs in a radius-4 disc at eps=1e-2, solved once."""
    geom = GapGeometry.from_shapes(disc(1.0, +1), disc(1.0, -1), eps=1e-2)
    outer = outer_disc(4.0)
    grid = build_grid(geom, outer, LIGHT_SPEC)
    v1 = solve_vi(1, grid)
    v2 = solve_vi(2, grid)
    phi_lin = BoundaryData(lambda x: x[1], "linear_xn")
    phi_one = BoundaryData(lambda x: 1.0, "constant")
    v0_lin = solve_v0(phi_lin, grid)
    v0_one = solve_v0(phi_one, grid)
    fs_lin = assemble_flux_system(v1, v2, v0_lin)
    fs_one = assemble_flux_system(v1, v2, v0_one)
    u_lin = assemble_u(fs_lin, v1, v2, v0_lin)
    return {
        "geom": geom, "outer": outer, "grid": grid,
        "v1": v1, "v2": v2, "v0_lin": v0_lin, "v0_one": v0_one,
        "fs_lin": fs_lin, "fs_one": fs_one, "u_lin": u_lin,
        "phi_lin": phi_lin, "phi_one": phi_one,
    }


@pytest.fixture(scope="session")
def annulus_bundle():
    """Concentric annulus r_in=0.5, R_out=2 at the light budget."""
    placed = PlacedInclusion(disc(0.5, +1), dy=-0.5)
    outer = outer_disc(2.0, clearance=0.25)
    grid = build_single_inclusion_grid(placed, outer, LIGHT_SPEC)
    v1 = solve_vi(1, grid)
    r = np.linalg.norm(grid.mesh.points, axis=1)
    exact = np.log(r / 2.0) / np.log(0.25)
    return {"placed": placed, "outer": outer, "grid": grid, "v1": v1,
            "r": r, "exact": exact}
