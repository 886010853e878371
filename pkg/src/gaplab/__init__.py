"""Numerical laboratory for gradient blow-up between nearly touching
perfectly conducting inclusions: direct solves on fitted graded meshes,
explicit asymptotic formulas, and the harness confronting the two."""

from . import (asymptotics, field_solver, functionals, geometry, harness,
               oracle, reconstruction)
from .asymptotics import (AsymptoticModel, EnergySeries, closed_form_2d,
                          closed_form_3d, fit_energy_model, gap_integral,
                          kappa, r_theta, rho)
from .field_solver import (BoundaryData, DiscreteField, FluxSystem, GradedGrid,
                           ResolutionSpec, assemble_flux_system, assemble_u,
                           build_grid, build_single_inclusion_grid, energy_of,
                           flux_inclusion, flux_outer, gradient, solve_v0,
                           solve_vi)
from .functionals import (FunctionalRecord, LimitConstants,
                          c_diff_identity_check, extrapolate_limits, q_eps,
                          theta_eps)
from .geometry import (GapGeometry, InclusionShape, OuterDomain, ball, disc,
                       ellipse, gap_patch, gap_width, outer_disc,
                       outer_rounded_rectangle, perturbed_disc, quadratic_gap,
                       relative_curvatures, translate_pair)
from .harness import ExperimentConfig, SweepRecord, run_solve, run_sweep
from .oracle import annulus_energy, annulus_exact, refine_oracle, symmetry_oracle
from .reconstruction import (blowup_rate_fit, residual_norms, singular_term,
                             ubar, ubar_grad)

__version__ = "0.1.0"
