import json
import math
import os

import numpy as np
import pytest

from gaplab.cli import main as cli_main
from gaplab.harness import (CSV_COLUMNS, ConfigError, DEFAULT_CONFIG,
                            ExperimentConfig, SweepRecord, read_sweep_csv,
                            report, run_solve, run_sweep, summary_text,
                            write_outputs)

# light configuration for harness tests: 3 eps over 1.5+ decades
LIGHT_GRID = {"wall_h": 0.009, "far_h": 0.05, "cx": 0.05, "n_gap": 11}


def light_config(tmp, **over):
    raw = {
        "schema_version": 1,
        "geometry": {"kind": "discs", "radii": [1.0, 1.0]},
        "outer": {"kind": "disc", "radius": 4.0, "clearance": 0.25},
        "phi": {"family": "linear_xn", "coeff": 1.0},
        "eps": [3e-2, 3e-3, 9e-4],
        "grid": dict(LIGHT_GRID),
        "out_dir": str(tmp / "out"),
    }
    raw.update(over)
    return raw


# --- config validation -------------------------------------------------------

def test_config_roundtrip(tmp_path):
    cfg = ExperimentConfig.from_dict(light_config(tmp_path))
    assert cfg.eps == (3e-2, 3e-3, 9e-4)
    assert cfg.build_geometry(1e-2).eps == 1e-2
    assert cfg.build_outer().perimeter == pytest.approx(8 * math.pi)
    assert cfg.build_phi()((0.0, 2.0)) == 2.0


def test_config_unknown_keys(tmp_path):
    with pytest.raises(ConfigError, match="unknown config keys"):
        ExperimentConfig.from_dict(light_config(tmp_path, rogue=1))
    with pytest.raises(ConfigError, match="unknown geometry keys"):
        ExperimentConfig.from_dict(light_config(
            tmp_path, geometry={"kind": "discs", "radii": [1, 1], "spin": 2}))
    with pytest.raises(ConfigError, match="unknown grid keys"):
        ExperimentConfig.from_dict(light_config(tmp_path, grid={"n_gaps": 9}))
    with pytest.raises(ConfigError, match="unknown phi"):
        ExperimentConfig.from_dict(light_config(tmp_path, phi={"family": "exotic"}))


def test_config_eps_validation(tmp_path):
    with pytest.raises(ConfigError, match="strictly decreasing"):
        ExperimentConfig.from_dict(light_config(tmp_path, eps=[1e-3, 1e-2]))
    with pytest.raises(ConfigError, match="positive"):
        ExperimentConfig.from_dict(light_config(tmp_path, eps=[1e-2, 0.0]))
    with pytest.raises(ConfigError, match="empty"):
        ExperimentConfig.from_dict(light_config(tmp_path, eps=[]))


def test_config_schema_and_tolerance(tmp_path):
    with pytest.raises(ConfigError, match="schema_version"):
        ExperimentConfig.from_dict(light_config(tmp_path, schema_version=99))
    with pytest.raises(ConfigError, match="positive"):
        ExperimentConfig.from_dict(light_config(tmp_path, quadrature_tol=-1.0))


def test_phi_families(tmp_path):
    cfg = ExperimentConfig.from_dict(light_config(
        tmp_path, phi={"family": "polynomial", "coeffs": [[0, 2, 1.0], [1, 0, 2.0]]}))
    assert cfg.build_phi()((3.0, 2.0)) == pytest.approx(4.0 + 6.0)
    cfg = ExperimentConfig.from_dict(light_config(
        tmp_path, phi={"family": "trig", "k": 2, "kind": "sin", "amplitude": 0.5}))
    p = (4.0 * math.cos(0.3), 4.0 * math.sin(0.3))
    assert cfg.build_phi()(p) == pytest.approx(0.5 * math.sin(0.6))
    cfg = ExperimentConfig.from_dict(light_config(
        tmp_path, phi={"family": "constant", "value": 2.5}))
    assert cfg.build_phi()((1.0, 1.0)) == 2.5


# --- single solve -------------------------------------------------------------

def test_run_solve_record(tmp_path):
    cfg = ExperimentConfig.from_dict(light_config(tmp_path))
    rec = run_solve(cfg, 1e-2)
    rec.validate(allow_nan_residual=True)
    assert rec.Theta_eps > 0
    assert rec.identity_resid <= 1e-12
    assert rec.rho_n == pytest.approx(0.1)
    assert rec.E1 > 0 and rec.E2 > 0
    assert math.isnan(rec.max_resid_gap)   # filled by the sweep only


def test_run_solve_unit_data(tmp_path):
    cfg = ExperimentConfig.from_dict(light_config(
        tmp_path, phi={"family": "constant", "value": 1.0}))
    rec = run_solve(cfg, 1e-2)
    assert rec.C1 == pytest.approx(1.0, abs=1e-8)
    assert rec.C2 == pytest.approx(1.0, abs=1e-8)
    assert abs(rec.Q_eps) < 1e-8 * rec.a11 ** 2


def test_run_solve_rejects_zero_eps(tmp_path):
    cfg = ExperimentConfig.from_dict(light_config(tmp_path))
    with pytest.raises(ConfigError):
        run_solve(cfg, 0.0)


def test_run_solve_rejects_3d(tmp_path):
    cfg = ExperimentConfig.from_dict(light_config(
        tmp_path, geometry={"kind": "balls", "radii": [1.0, 1.0]}))
    with pytest.raises(ConfigError, match="2D"):
        run_solve(cfg, 1e-2)


# --- sweep, outputs, determinism ----------------------------------------------

@pytest.fixture(scope="module")
def sweep_out(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("sweep")
    cfg = ExperimentConfig.from_dict(light_config(tmp))
    result = run_sweep(cfg)
    return tmp, cfg, result


def test_sweep_outputs_exist(sweep_out):
    tmp, cfg, result = sweep_out
    for name in ("sweep.csv", "report.json", "summary.txt"):
        assert os.path.exists(os.path.join(cfg.out_dir, name))
    assert len(result.records) == 3
    for rec in result.records:
        assert np.isfinite(rec.max_resid_gap)


def test_sweep_csv_schema_and_roundtrip(sweep_out):
    tmp, cfg, result = sweep_out
    path = os.path.join(cfg.out_dir, "sweep.csv")
    with open(path) as f:
        header = f.readline().strip().split(",")
    assert header == CSV_COLUMNS
    records = read_sweep_csv(path)
    assert len(records) == 3
    assert records[0].eps == result.records[0].eps
    assert records[2].Theta_eps == pytest.approx(result.records[2].Theta_eps,
                                                 rel=1e-16)


def test_sweep_deterministic_rerun(sweep_out, tmp_path):
    tmp, cfg, result = sweep_out
    cfg2 = ExperimentConfig.from_dict(light_config(tmp_path))
    run_sweep(cfg2)
    a = open(os.path.join(cfg.out_dir, "sweep.csv"), "rb").read()
    b = open(os.path.join(cfg2.out_dir, "sweep.csv"), "rb").read()
    assert a == b


def test_sweep_report_contents(sweep_out):
    tmp, cfg, result = sweep_out
    rep = json.load(open(os.path.join(cfg.out_dir, "report.json")))
    assert not rep["empty"]
    assert rep["identity_residual_max"] <= 1e-12
    assert "energy_fit" in rep and "limits" in rep and "blowup" in rep
    assert len(rep["singular_prefactor"]) == 3
    # prefactor echoes Q* sqrt(eps) / Theta*
    lm = rep["limits"]
    for row in rep["singular_prefactor"]:
        expected = lm["Q_star"] * math.sqrt(row["eps"]) / lm["Theta_star"]
        assert row["prefactor"] == pytest.approx(expected, rel=1e-12)
    txt = summary_text(result.records, rep)
    assert "limits:" in txt and "blow-up" in txt


def test_sweep_threads_match_serial(sweep_out, tmp_path):
    tmp, cfg, result = sweep_out
    cfg2 = ExperimentConfig.from_dict(light_config(tmp_path))
    res2 = run_sweep(cfg2, threads=3, write=False)
    for a, b in zip(result.records, res2.records):
        assert a.E1 == b.E1 and a.C1 == b.C1


def test_empty_report_marker():
    rep = report([], None)
    assert rep["empty"] is True
    assert "empty sweep" in summary_text([], rep).lower()


def test_sweep_needs_three_eps(tmp_path):
    cfg = ExperimentConfig.from_dict(light_config(tmp_path, eps=[1e-2, 1e-3]))
    with pytest.raises(ConfigError):
        run_sweep(cfg)


def test_unit_data_sweep_refuses_blowup(tmp_path):
    cfg = ExperimentConfig.from_dict(light_config(
        tmp_path, phi={"family": "constant", "value": 1.0},
        out_dir=str(tmp_path / "flat")))
    res = run_sweep(cfg)
    assert res.blowup.refused
    assert "zero" in res.blowup.reason
    grads = [r.max_grad_u_gap for r in res.records]
    assert max(grads) < 1e-4   # no blow-up for constant data


# --- CLI -----------------------------------------------------------------------

def _write_cfg(tmp, raw):
    path = tmp / "config.json"
    path.write_text(json.dumps(raw))
    return str(path)


def test_cli_config_error(tmp_path):
    path = _write_cfg(tmp_path, {"schema_version": 1})
    assert cli_main(["solve", "--config", path]) == 2
    assert cli_main(["solve", "--config", str(tmp_path / "missing.json")]) == 2


def test_cli_solver_error_exit_code(tmp_path):
    raw = light_config(tmp_path, eps=[2e-6], grid=dict(LIGHT_GRID))
    path = _write_cfg(tmp_path, raw)
    assert cli_main(["solve", "--config", path]) == 3   # below the eps floor


def test_cli_solve_and_sweep(tmp_path, capsys):
    raw = light_config(tmp_path)
    path = _write_cfg(tmp_path, raw)
    assert cli_main(["solve", "--config", path, "--eps", "1e-2"]) == 0
    out = capsys.readouterr().out
    assert json.loads(out)["eps"] == 1e-2

    assert cli_main(["sweep", "--config", path]) == 0
    assert os.path.exists(os.path.join(raw["out_dir"], "sweep.csv"))

    for sub in ("energy-fit", "limits", "reconstruct", "report"):
        assert cli_main([sub, "--config", path]) == 0, sub
    out = capsys.readouterr().out
    assert "Theta_star" in out or "prefactor" in out


def test_cli_eps_override_and_fit_failure(tmp_path, capsys):
    raw = light_config(tmp_path, out_dir=str(tmp_path / "ov"))
    path = _write_cfg(tmp_path, raw)
    # narrow span: solves succeed but the energy fit must refuse -> exit 4
    code = cli_main(["sweep", "--config", path,
                     "--eps-override", "1e-2,8e-3,6e-3"])
    assert code == 0   # sweep records fine; fits degrade gracefully
    rep = json.load(open(os.path.join(raw["out_dir"], "report.json")))
    assert "fit_error" in rep
    # energy-fit subcommand on the narrow-span records reports failure
    assert cli_main(["energy-fit", "--config", path,
                     "--eps-override", "1e-2,8e-3,6e-3"]) == 4
