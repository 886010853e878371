"""Command-line entry point.

Subcommands: solve, sweep, energy-fit, limits, reconstruct, report.
Exit codes: 0 success, 2 config error, 3 solver failure, 4 fit failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys

from .asymptotics import AsymptoticsError, EnergySeries, fit_energy_model
from .fem import SolverError
from .functionals import FunctionalRecord, FunctionalsError, extrapolate_limits
from .geometry import GeometryError
from .harness import (ConfigError, ExperimentConfig, read_sweep_csv, report,
                      run_solve, run_sweep, summary_text, write_outputs)
from .meshing import GridBudgetError, MeshQualityError
from .reconstruction import singular_prefactor

EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_FIT = 4


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gaplab",
                                description="thin-gap conductor experiments")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("solve", "sweep", "energy-fit", "limits", "reconstruct", "report"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON experiment config")
        sp.add_argument("--out", default=None, help="output directory override")
        sp.add_argument("--eps-override", default=None,
                        help="comma-separated eps list replacing the config's")
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--tolerance", type=float, default=None,
                        help="quadrature tolerance override")
        if name == "solve":
            sp.add_argument("--eps", type=float, default=None,
                            help="single eps (default: first in config)")
    return p


def _load(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config)
    updates = {}
    if args.out:
        updates["out_dir"] = args.out
    if args.eps_override:
        eps = tuple(float(v) for v in args.eps_override.split(","))
        updates["eps"] = eps
    if args.tolerance is not None:
        updates["quadrature_tol"] = args.tolerance
    if updates:
        raw = dataclasses.asdict(cfg)
        raw.update(updates)
        raw["schema_version"] = 1
        cfg = ExperimentConfig.from_dict(raw)
    return cfg


def _records_and_fits(cfg: ExperimentConfig):
    path = os.path.join(cfg.out_dir, "sweep.csv")
    records = read_sweep_csv(path)
    geom = cfg.build_geometry(cfg.eps[0])
    series = EnergySeries.from_pairs([(r.eps, r.E1) for r in records])
    model = fit_energy_model(series, geom.n, geom.lambdas)
    func = [FunctionalRecord(eps=r.eps, Q_eps=r.Q_eps, Theta_eps=r.Theta_eps,
                             C_diff=r.C1 - r.C2, alpha1=r.alpha1,
                             alpha2=r.alpha2, flux_v0=(-r.b1, -r.b2))
            for r in records]
    limits = extrapolate_limits(func, geom.n, model.M[1], model.kappa_n)
    return records, model, limits


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = _load(args)
    except (ConfigError, GeometryError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "solve":
            eps = args.eps if args.eps is not None else cfg.eps[0]
            rec = run_solve(cfg, eps)
            d = dataclasses.asdict(rec)
            if math.isnan(d["max_resid_gap"]):
                d["max_resid_gap"] = None   # filled by sweeps only
            print(json.dumps(d, indent=2))
        elif args.command == "sweep":
            result = run_sweep(cfg, threads=max(1, args.threads))
            print(summary_text(result.records, result.report))
            print(f"outputs written to {cfg.out_dir}/")
        elif args.command == "energy-fit":
            _, model, _ = _records_and_fits(cfg)
            print(json.dumps({
                "kappa_n": model.kappa_n, "M1": model.M.get(1),
                "M1_err": model.M_err.get(1), "kappa_free": model.kappa_free,
                "M_free": model.M_free, "remainder_slope": model.remainder_slope,
            }, indent=2))
        elif args.command == "limits":
            _, _, limits = _records_and_fits(cfg)
            print(json.dumps({
                "Q_star": limits.Q_star, "Theta_star": limits.Theta_star,
                "alpha1_star": limits.alpha1_star,
                "alpha2_star": limits.alpha2_star,
                "M1": limits.M1, "Mtilde": limits.Mtilde,
                "errors": limits.errors, "diagnostics": limits.diagnostics,
            }, indent=2))
        elif args.command == "reconstruct":
            records, model, limits = _records_and_fits(cfg)
            geom = cfg.build_geometry(cfg.eps[0])
            rows = []
            for r in records:
                pref = singular_prefactor(limits, geom.n, r.eps)
                rows.append({
                    "eps": r.eps, "prefactor": pref,
                    "peak_profile_gradient": 1.0 / r.eps,
                    "predicted_peak": abs(pref) / r.eps,
                    "measured_max_grad": r.max_grad_u_gap,
                    "measured_max_residual": r.max_resid_gap,
                })
            print(json.dumps(rows, indent=2))
        elif args.command == "report":
            records, model, limits = _records_and_fits(cfg)
            rep = report(records, limits, model=model, cfg=cfg)
            write_outputs(cfg.out_dir, records, rep)
            print(summary_text(records, rep))
    except (ConfigError, GeometryError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, GridBudgetError, MeshQualityError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (AsymptoticsError, FunctionalsError) as exc:
        print(f"fit failure: {exc}", file=sys.stderr)
        return EXIT_FIT
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return 0


if __name__ == "__main__":
    sys.exit(main())
