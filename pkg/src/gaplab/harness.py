"""Config-driven experiment runner: solves, sweeps, fits, persistence.

A single JSON config describes the geometry, the outer data, the eps list
and the grid budget.  ``run_sweep`` executes the full pipeline per eps
(grid, three solves, fluxes, functionals, reconstruction), then the
cross-eps fits, and writes ``sweep.csv`` (one row per eps, fixed column
order, 17 significant digits), ``report.json`` and ``summary.txt``
atomically.  Reruns of the same config produce byte-identical CSV output;
wall-clock times are reported in the JSON only.
"""

from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import asymptotics, functionals, reconstruction
from .asymptotics import AsymptoticsError, EnergySeries, fit_energy_model, kappa, rho
from .field_solver import (BoundaryData, DEFAULT_RESOLUTION, DiscreteField,
                           GradedGrid, GridBudgetError, ResolutionSpec,
                           SolverError, assemble_flux_system, assemble_u,
                           build_grid, energy_of, gradient, solve_v0, solve_vi)
from .functionals import (FunctionalRecord, FunctionalsError, LimitConstants,
                          c_diff_identity_check, extrapolate_limits, q_eps,
                          theta_eps)
from .geometry import (GapGeometry, GeometryError, InclusionShape, OuterDomain,
                       ball, disc, ellipse, outer_disc, outer_rounded_rectangle,
                       perturbed_disc)
from .meshing import MeshQualityError
from .reconstruction import (BlowupFit, blowup_rate_fit,
                             profile_cell_gradients, singular_prefactor)

__all__ = [
    "ConfigError", "ExperimentConfig", "SweepRecord", "SweepResult",
    "run_solve", "run_sweep", "report", "CSV_COLUMNS", "write_outputs",
    "DEFAULT_CONFIG",
]

SCHEMA_VERSION = 1

CSV_COLUMNS = [
    "eps", "rho_n", "E1", "E2", "a11", "a12", "a21", "a22",
    "alpha1", "alpha2", "b1", "b2", "Q_eps", "Theta_eps", "C1", "C2",
    "max_grad_u_gap", "max_resid_gap", "identity_resid",
]


class ConfigError(ValueError):
    pass


DEFAULT_CONFIG = {
    "schema_version": SCHEMA_VERSION,
    "geometry": {"kind": "discs", "radii": [1.0, 1.0]},
    "outer": {"kind": "disc", "radius": 4.0, "clearance": 0.25},
    "phi": {"family": "linear_xn", "coeff": 1.0},
    "eps": [1e-2, 3e-3, 1e-3, 3e-4, 1e-4],
    "grid": {},
    "quadrature_tol": 1e-10,
    "out_dir": "out",
    "seed": 0,
}


@dataclass(frozen=True)
class ExperimentConfig:
    geometry: dict
    outer: dict
    phi: dict
    eps: tuple[float, ...]
    grid: dict = field(default_factory=dict)
    quadrature_tol: float = 1e-10
    out_dir: str = "out"
    seed: int = 0          # reserved; the numerics are deterministic

    @staticmethod
    def from_dict(d: dict) -> "ExperimentConfig":
        allowed = {"schema_version", "geometry", "outer", "phi", "eps",
                   "grid", "quadrature_tol", "out_dir", "seed"}
        unknown = set(d) - allowed
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ConfigError(f"schema_version must be {SCHEMA_VERSION}")
        for key in ("geometry", "outer", "phi", "eps"):
            if key not in d:
                raise ConfigError(f"missing config key: {key}")
        eps = tuple(float(e) for e in d["eps"])
        if len(eps) == 0:
            raise ConfigError("eps list is empty")
        if any(e <= 0 for e in eps):
            raise ConfigError("eps values must be positive (eps=0 is not solvable)")
        if len(eps) > 1 and not all(a > b for a, b in zip(eps, eps[1:])):
            raise ConfigError("eps list must be strictly decreasing")
        tol = float(d.get("quadrature_tol", 1e-10))
        if tol <= 0:
            raise ConfigError("tolerances must be positive")
        cfg = ExperimentConfig(
            geometry=dict(d["geometry"]), outer=dict(d["outer"]),
            phi=dict(d["phi"]), eps=eps, grid=dict(d.get("grid", {})),
            quadrature_tol=tol, out_dir=str(d.get("out_dir", "out")),
            seed=int(d.get("seed", 0)),
        )
        cfg.build_geometry()
        cfg.build_outer()
        cfg.build_phi()
        cfg.build_resolution()
        return cfg

    @staticmethod
    def from_file(path: str) -> "ExperimentConfig":
        try:
            with open(path) as f:
                raw = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return ExperimentConfig.from_dict(raw)

    # -- builders -----------------------------------------------------------

    def build_geometry(self, eps: float | None = None) -> GapGeometry:
        g = dict(self.geometry)
        kind = g.pop("kind", None)
        kappa_lb = g.pop("kappa_lb", None)
        e = self.eps[0] if eps is None else eps
        if kind == "discs":
            r1, r2 = g.pop("radii")
            shapes = (disc(r1, +1), disc(r2, -1))
        elif kind == "balls":
            r1, r2 = g.pop("radii")
            shapes = (ball(r1, +1), ball(r2, -1))
        elif kind == "ellipses":
            a1, b1 = g.pop("upper")
            a2, b2 = g.pop("lower")
            shapes = (ellipse(a1, b1, +1), ellipse(a2, b2, -1))
        elif kind == "perturbed-discs":
            r1, r2 = g.pop("radii")
            cubic = g.pop("cubic", [0.0])
            shapes = (perturbed_disc(r1, cubic, +1), disc(r2, -1))
        else:
            raise ConfigError(f"unknown geometry kind {kind!r}")
        if g:
            raise ConfigError(f"unknown geometry keys: {sorted(g)}")
        try:
            return GapGeometry.from_shapes(*shapes, eps=e, kappa_lb=kappa_lb)
        except GeometryError as exc:
            raise ConfigError(str(exc)) from exc

    def build_outer(self) -> OuterDomain:
        o = dict(self.outer)
        kind = o.pop("kind", None)
        clearance = o.pop("clearance", 0.25)
        if kind == "disc":
            dom = outer_disc(o.pop("radius"), clearance)
        elif kind == "rectangle-with-rounded-corners":
            dom = outer_rounded_rectangle(o.pop("width"), o.pop("height"),
                                          o.pop("corner_radius"), clearance)
        else:
            raise ConfigError(f"unknown outer kind {kind!r}")
        if o:
            raise ConfigError(f"unknown outer keys: {sorted(o)}")
        return dom

    def build_phi(self) -> BoundaryData:
        p = dict(self.phi)
        family = p.pop("family", None)
        if family == "constant":
            c = float(p.pop("value"))
            fn = lambda x: c
        elif family == "linear_xn":
            c = float(p.pop("coeff", 1.0))
            fn = lambda x: c * x[1]
        elif family == "polynomial":
            terms = [(int(i), int(j), float(cc)) for i, j, cc in p.pop("coeffs")]
            fn = lambda x: sum(cc * x[0]**i * x[1]**j for i, j, cc in terms)
        elif family == "trig":
            k = int(p.pop("k", 1))
            kind = p.pop("kind", "cos")
            amp = float(p.pop("amplitude", 1.0))
            trig = math.cos if kind == "cos" else math.sin
            fn = lambda x: amp * trig(k * math.atan2(x[1], x[0]))
        else:
            raise ConfigError(f"unknown phi family {family!r}")
        if p:
            raise ConfigError(f"unknown phi keys: {sorted(p)}")
        return BoundaryData(fn, name=family)

    def build_resolution(self) -> ResolutionSpec:
        g = dict(self.grid)
        refine = g.pop("refine", 1.0)
        fields = {f for f in ResolutionSpec.__dataclass_fields__}
        unknown = set(g) - fields
        if unknown:
            raise ConfigError(f"unknown grid keys: {sorted(unknown)}")
        try:
            spec = replace(DEFAULT_RESOLUTION, **g)
            if refine != 1.0:
                spec = spec.refined(refine)
        except (TypeError, GridBudgetError) as exc:
            raise ConfigError(str(exc)) from exc
        return spec

    @property
    def dim(self) -> int:
        return 3 if self.geometry.get("kind") == "balls" else 2


@dataclass
class SweepRecord:
    """One row per eps; every field finite, identity residual recorded."""

    eps: float
    rho_n: float
    E1: float
    E2: float
    a11: float
    a12: float
    a21: float
    a22: float
    alpha1: float
    alpha2: float
    b1: float
    b2: float
    Q_eps: float
    Theta_eps: float
    C1: float
    C2: float
    max_grad_u_gap: float
    max_resid_gap: float
    identity_resid: float
    wall_time_s: float = 0.0

    def validate(self, allow_nan_residual: bool = False):
        for c in CSV_COLUMNS:
            v = getattr(self, c)
            if c == "max_resid_gap" and allow_nan_residual and math.isnan(v):
                continue   # standalone solves have no limit constants yet
            if not np.isfinite(v):
                raise SolverError(f"non-finite value in sweep record: {c}")
        if self.identity_resid > 1e-12:
            raise SolverError(
                f"constant-difference identity residual {self.identity_resid:.3e} "
                "exceeds 1e-12: assembly bug")

    def csv_row(self) -> str:
        return ",".join(_fmt17(getattr(self, c)) for c in CSV_COLUMNS)


def _fmt17(x: float) -> str:
    return f"{x:.17g}"


@dataclass
class _EpsBundle:
    """Per-eps data retained for the post-limits residual pass."""

    eps: float
    grad_u: np.ndarray        # (cells, 2) over the gap patch
    grad_ubar: np.ndarray     # (cells, 2) profile gradient at the same centroids
    grad_v1: np.ndarray       # (cells, 2)
    max_grad_v1: float
    max_grad_w1: float        # max |grad(v1 - ubar)| over the patch


@dataclass
class SweepResult:
    records: list
    model: object
    limits: LimitConstants | None
    blowup: BlowupFit | None
    report: dict
    bundles: list


def _solve_one(cfg: ExperimentConfig, eps: float):
    t0 = time.perf_counter()
    geom = cfg.build_geometry(eps)
    outer = cfg.build_outer()
    phi = cfg.build_phi()
    spec = cfg.build_resolution()
    grid = build_grid(geom, outer, spec)
    v1 = solve_vi(1, grid)
    v2 = solve_vi(2, grid)
    v0 = solve_v0(phi, grid)
    fs = assemble_flux_system(v1, v2, v0)
    q = q_eps(fs)
    th = theta_eps(fs, eps, geom.n)
    ident = c_diff_identity_check(fs, q, th, eps, geom.n)
    u = assemble_u(fs, v1, v2, v0)

    # gradient maxima over the full patch; profile comparisons restricted to
    # the zone where the profile is the explicit formula (inside the blend)
    cells_full = grid.gap_cells(geom.R0)
    cells = grid.gap_cells(geom.R0 / 2)
    gu = gradient(u)[cells]
    gv1 = gradient(v1)[cells]
    gub = profile_cell_gradients(geom, grid, cells)
    max_grad_u = float(np.max(np.linalg.norm(gradient(u)[cells_full], axis=1)))
    max_grad_v1 = float(np.max(np.linalg.norm(gradient(v1)[cells_full], axis=1)))
    max_grad_w1 = float(np.max(np.linalg.norm(gv1 - gub, axis=1)))

    rec = SweepRecord(
        eps=eps, rho_n=rho(geom.n, eps),
        E1=energy_of(v1), E2=energy_of(v2),
        a11=fs.a[0, 0], a12=fs.a[0, 1], a21=fs.a[1, 0], a22=fs.a[1, 1],
        alpha1=fs.alpha1, alpha2=fs.alpha2, b1=fs.b[0], b2=fs.b[1],
        Q_eps=q, Theta_eps=th, C1=fs.C1, C2=fs.C2,
        max_grad_u_gap=max_grad_u, max_resid_gap=float("nan"),
        identity_resid=ident, wall_time_s=time.perf_counter() - t0,
    )
    bundle = _EpsBundle(eps=eps, grad_u=gu, grad_ubar=gub, grad_v1=gv1,
                        max_grad_v1=max_grad_v1, max_grad_w1=max_grad_w1)
    return rec, bundle


def run_solve(cfg: ExperimentConfig, eps: float) -> SweepRecord:
    """Geometry -> grid -> three solves -> fluxes -> functionals; one record.

    The residual column needs the sweep-level limit constants and is filled
    by run_sweep; it is NaN for a standalone solve.
    """
    if eps <= 0:
        raise ConfigError("eps must be positive")
    if cfg.dim != 2:
        raise ConfigError("direct solves are 2D; the 3D layer is asymptotic only")
    rec, _ = _solve_one(cfg, eps)
    return rec


def run_sweep(cfg: ExperimentConfig, threads: int = 1,
              write: bool = True) -> SweepResult:
    """Per-eps records, then the energy fit, the limit extrapolation and the
    blow-up fit; writes sweep.csv, report.json and summary.txt."""
    if cfg.dim != 2:
        raise ConfigError("direct sweeps are 2D; the 3D layer is asymptotic only")
    if len(cfg.eps) < 3:
        raise ConfigError("a sweep needs at least 3 eps values")

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outs = list(pool.map(lambda e: _solve_one(cfg, e), cfg.eps))
    else:
        outs = [_solve_one(cfg, e) for e in cfg.eps]
    records = [o[0] for o in outs]
    bundles = [o[1] for o in outs]

    geom = cfg.build_geometry(cfg.eps[0])
    n = geom.n
    model = None
    limits = None
    blowup = None
    fit_error = None
    try:
        series = EnergySeries.from_pairs(
            [(r.eps, r.E1) for r in records], inclusion=1,
            geometry_hash=asymptotics.geometry_hash(geom))
        model = fit_energy_model(series, n, geom.lambdas)
        func_records = [FunctionalRecord(
            eps=r.eps, Q_eps=r.Q_eps, Theta_eps=r.Theta_eps,
            C_diff=r.C1 - r.C2, alpha1=r.alpha1, alpha2=r.alpha2,
            flux_v0=(-r.b1, -r.b2)) for r in records]
        limits = extrapolate_limits(func_records, n, model.M[1], model.kappa_n)
        blowup = blowup_rate_fit([r.eps for r in records],
                                 [r.max_grad_u_gap for r in records],
                                 q_star=limits.Q_star,
                                 q_noise=max(3.0 * limits.errors["Q_star"], 1e-9))
    except (AsymptoticsError, FunctionalsError) as exc:
        fit_error = str(exc)

    if limits is not None:
        for rec, bundle in zip(records, bundles):
            pref = singular_prefactor(limits, n, rec.eps)
            res = np.linalg.norm(bundle.grad_u - pref * bundle.grad_ubar, axis=1)
            rec.max_resid_gap = float(np.max(res))
    else:
        for rec, bundle in zip(records, bundles):
            res = np.linalg.norm(bundle.grad_u, axis=1)
            rec.max_resid_gap = float(np.max(res))

    for rec in records:
        rec.validate()

    rep = report(records, limits, model=model, blowup=blowup, cfg=cfg,
                 bundles=bundles, fit_error=fit_error)
    result = SweepResult(records=records, model=model, limits=limits,
                         blowup=blowup, report=rep, bundles=bundles)
    if write:
        write_outputs(cfg.out_dir, records, rep)
    return result


# ---------------------------------------------------------------------------
# reporting


def report(records: list, limits: LimitConstants | None, *, model=None,
           blowup: BlowupFit | None = None, cfg: ExperimentConfig | None = None,
           bundles: list | None = None, fit_error: str | None = None) -> dict:
    """Machine-readable report with the summary tables embedded."""
    if not records:
        return {"schema_version": SCHEMA_VERSION, "empty": True,
                "note": "empty sweep: no records"}
    n = cfg.dim if cfg is not None else 2
    rep: dict = {
        "schema_version": SCHEMA_VERSION,
        "empty": False,
        "n": n,
        "eps": [r.eps for r in records],
        "wall_time_s": [r.wall_time_s for r in records],
        "identity_residual_max": max(r.identity_resid for r in records),
    }
    if fit_error:
        rep["fit_error"] = fit_error
    if model is not None:
        rep["energy_fit"] = {
            "kappa_n": model.kappa_n,
            "M1": model.M.get(1), "M1_err": model.M_err.get(1),
            "kappa_free": model.kappa_free, "M_free": model.M_free,
            "remainder_slope": model.remainder_slope,
            "tail_spread": model.tail_spread,
            "residuals": list(model.fit_residuals),
        }
        rep["energy_table"] = [
            {"eps": r.eps,
             "E1": r.E1,
             "prediction": model.kappa_n / r.rho_n + model.M.get(1),
             "difference": r.E1 - model.kappa_n / r.rho_n - model.M.get(1)}
            for r in records]
    if limits is not None:
        rep["limits"] = {
            "Q_star": limits.Q_star, "Theta_star": limits.Theta_star,
            "alpha1_star": limits.alpha1_star, "alpha2_star": limits.alpha2_star,
            "M1": limits.M1, "Mtilde": limits.Mtilde,
            "Mtilde_sign": "positive" if limits.Mtilde > 0 else "non-positive",
            "errors": limits.errors, "diagnostics": limits.diagnostics,
        }
        rep["theta_table"] = [
            {"eps": r.eps, "Theta_eps": r.Theta_eps,
             "prediction": limits.Theta_star * (1.0 - limits.Mtilde * r.rho_n),
             "difference": r.Theta_eps
             - limits.Theta_star * (1.0 - limits.Mtilde * r.rho_n)}
            for r in records]
        rep["singular_prefactor"] = [
            {"eps": r.eps, "prefactor": singular_prefactor(limits, n, r.eps)}
            for r in records]
    if blowup is not None:
        rep["blowup"] = {"slope": blowup.slope, "ci95": blowup.ci95,
                         "refused": blowup.refused, "reason": blowup.reason}
    rep["growth_table"] = [
        {"eps": r.eps, "max_grad_u_gap": r.max_grad_u_gap,
         "max_resid_gap": r.max_resid_gap} for r in records]
    if bundles is not None:
        rep["profile_comparison"] = [
            {"eps": b.eps, "max_grad_v1": b.max_grad_v1,
             "max_grad_v1_minus_profile": b.max_grad_w1,
             "eps_times_max_grad_v1": b.eps * b.max_grad_v1}
            for b in bundles]
    if cfg is not None and cfg.dim == 3:
        rep["asymptotic_layer_3d"] = _layer_3d_table(cfg)
    return rep


def _layer_3d_table(cfg: ExperimentConfig) -> list[dict]:
    geom = cfg.build_geometry(cfg.eps[0])
    lam = geom.lambdas
    rows = []
    for e in cfg.eps:
        closed = asymptotics.closed_form_3d(lam[0], lam[1], geom.R0, e)
        quad = asymptotics.gap_integral(geom, e, geom.R0,
                                        tol=cfg.quadrature_tol)
        rows.append({"eps": e, "closed_form_3d": closed,
                     "gap_integral": quad, "difference": quad - closed})
    return rows


def summary_text(records: list, rep: dict) -> str:
    """Human-readable tables mirroring the report."""
    lines = []
    if rep.get("empty"):
        return "EMPTY SWEEP: no records\n"
    lines.append(f"sweep of {len(records)} eps values; "
                 f"max identity residual {rep['identity_residual_max']:.3e}")
    if "energy_fit" in rep:
        ef = rep["energy_fit"]
        lines.append("")
        lines.append(f"energy expansion: kappa_n={ef['kappa_n']:.9g} "
                     f"M1={ef['M1']:.6g} +/- {ef['M1_err']:.2g} "
                     f"(free fit kappa={ef['kappa_free']:.6g}, M={ef['M_free']:.6g}; "
                     f"remainder slope {ef['remainder_slope']})")
        lines.append(f"{'eps':>10} {'E1':>18} {'kappa/rho + M1':>18} {'diff':>12}")
        for row in rep["energy_table"]:
            lines.append(f"{row['eps']:>10.3e} {row['E1']:>18.10g} "
                         f"{row['prediction']:>18.10g} {row['difference']:>12.3e}")
    if "limits" in rep:
        lm = rep["limits"]
        lines.append("")
        lines.append(
            f"limits: Q*={lm['Q_star']:.8g} (+/- {lm['errors']['Q_star']:.2g})  "
            f"Theta*={lm['Theta_star']:.8g} (+/- {lm['errors']['Theta_star']:.2g})  "
            f"alpha1*={lm['alpha1_star']:.8g}  alpha2*={lm['alpha2_star']:.8g}")
        lines.append(f"Mtilde={lm['Mtilde']:.8g} ({lm['Mtilde_sign']}, "
                     f"+/- {lm['errors']['Mtilde']:.2g}); "
                     f"delta0={lm['diagnostics']['delta0']:.8g}")
        lines.append(f"{'eps':>10} {'Theta_eps':>16} {'Theta*(1-Mt rho)':>18} {'diff':>12}")
        for row in rep["theta_table"]:
            lines.append(f"{row['eps']:>10.3e} {row['Theta_eps']:>16.9g} "
                         f"{row['prediction']:>18.9g} {row['difference']:>12.3e}")
    if "blowup" in rep:
        bl = rep["blowup"]
        if bl["refused"]:
            lines.append(f"\nblow-up fit refused: {bl['reason']}")
        else:
            lines.append(f"\nblow-up slope {bl['slope']:.4f} +/- {bl['ci95']:.4f} (95%)")
    lines.append("")
    lines.append(f"{'eps':>10} {'max|grad u|':>14} {'max residual':>14}")
    for row in rep["growth_table"]:
        lines.append(f"{row['eps']:>10.3e} {row['max_grad_u_gap']:>14.6g} "
                     f"{row['max_resid_gap']:>14.6g}")
    if "asymptotic_layer_3d" in rep:
        lines.append("")
        lines.append(f"{'eps':>10} {'closed form (3D)':>18} {'quadrature':>18} {'diff':>12}")
        for row in rep["asymptotic_layer_3d"]:
            lines.append(f"{row['eps']:>10.3e} {row['closed_form_3d']:>18.10g} "
                         f"{row['gap_integral']:>18.10g} {row['difference']:>12.3e}")
    return "\n".join(lines) + "\n"


def write_outputs(out_dir: str, records: list, rep: dict):
    """sweep.csv, report.json, summary.txt; atomic write-then-rename."""
    os.makedirs(out_dir, exist_ok=True)
    csv_text = ",".join(CSV_COLUMNS) + "\n" + "".join(
        r.csv_row() + "\n" for r in records)
    _atomic_write(os.path.join(out_dir, "sweep.csv"), csv_text)
    _atomic_write(os.path.join(out_dir, "report.json"),
                  json.dumps(rep, indent=2, default=_json_default) + "\n")
    _atomic_write(os.path.join(out_dir, "summary.txt"),
                  summary_text(records, rep))


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not JSON serializable: {type(x)}")


def _atomic_write(path: str, text: str):
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        f.write(text)
    os.replace(tmp, path)


def read_sweep_csv(path: str) -> list[SweepRecord]:
    with open(path) as f:
        header = f.readline().strip().split(",")
        if header != CSV_COLUMNS:
            raise ConfigError(f"unexpected CSV schema in {path}")
        records = []
        for line in f:
            vals = [float(v) for v in line.strip().split(",")]
            records.append(SweepRecord(**dict(zip(CSV_COLUMNS, vals))))
    return records
