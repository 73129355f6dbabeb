import json

import numpy as np
import pytest

from ldscheme.cli import main


def _write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def _run(tmp_path, name, config, sub="out", extra=()):
    cfg = _write(tmp_path / f"{name}.json", config)
    out = tmp_path / sub
    out.mkdir(exist_ok=True)
    code = main([name, "--config", cfg, "--out", str(out), *extra])
    return code, out


OU = {"preset": "gaussian-ou"}
FREE = {"preset": "gaussian-free"}


def test_simulate_writes_trajectory_and_resolved_config(tmp_path):
    code, out = _run(tmp_path, "simulate", {"model": OU, "x": [1.0], "n": 8, "seed": 5})
    assert code == 0
    assert (out / "trajectory.csv").exists()
    resolved = json.loads((out / "resolved_config.json").read_text())
    assert resolved["command"] == "simulate"
    assert resolved["a"] == 0.0  # default echoed back
    assert resolved["seed"] == 5


def test_simulate_reruns_byte_identical(tmp_path):
    cfg = {"model": OU, "x": [0.5], "n": 16, "a": 0.3, "seed": 9}
    _, out1 = _run(tmp_path, "simulate", cfg, sub="out1")
    _, out2 = _run(tmp_path, "simulate", cfg, sub="out2")
    assert (out1 / "trajectory.csv").read_bytes() == (out2 / "trajectory.csv").read_bytes()


def test_simulate_deterministic_model_is_euler_polygon(tmp_path):
    model = {
        "dim": 1,
        "drift": {"kind": "linear", "matrix": [[-1.0]]},
        "sigma": {"kind": "zero"},
        "base": {"kind": "gaussian"},
    }
    code, out = _run(tmp_path, "simulate", {"model": model, "x": [1.0], "n": 4, "seed": 0})
    assert code == 0
    lines = (out / "trajectory.csv").read_text().strip().splitlines()
    assert lines[0] == "t,x1"
    assert len(lines) == 6
    vals = np.array([float(row.split(",")[1]) for row in lines[1:]])
    expect = [1.0]
    for _ in range(4):
        expect.append(expect[-1] * (1 - 0.25))
    assert np.allclose(vals, expect, atol=1e-15)


def test_missing_required_key_names_it(tmp_path, capsys):
    code, _ = _run(tmp_path, "simulate", {"model": OU, "x": [1.0], "seed": 5})
    assert code == 2
    assert "config.n" in capsys.readouterr().err


def test_unknown_key_is_an_error(tmp_path, capsys):
    code, _ = _run(
        tmp_path, "simulate", {"model": OU, "x": [1.0], "n": 4, "seed": 5, "nsteps": 4}
    )
    assert code == 2
    assert "nsteps" in capsys.readouterr().err


def test_bad_json_and_missing_file(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    out = tmp_path / "o"
    out.mkdir()
    assert main(["simulate", "--config", str(bad), "--out", str(out)]) == 2
    assert main(["simulate", "--config", str(tmp_path / "nope.json"), "--out", str(out)]) == 2


def test_action_inline_knots(tmp_path):
    code, out = _run(
        tmp_path,
        "action",
        {"model": FREE, "x": [0.0], "knots": [[0.0], [0.5], [1.0]]},
    )
    assert code == 0
    rep = json.loads((out / "action_report.json").read_text())
    assert rep["finite"]
    assert rep["value"] == pytest.approx(0.5, abs=1e-9)
    assert rep["reason"] is None


def test_action_infeasible_start_reports_inf(tmp_path):
    code, out = _run(
        tmp_path,
        "action",
        {"model": FREE, "x": [0.0], "knots": [[1.0], [1.0]]},
    )
    assert code == 0  # a divergent cost is a result, not a failure
    rep = json.loads((out / "action_report.json").read_text())
    assert rep["value"] == "inf"
    assert not rep["finite"]
    assert "initial condition" in rep["reason"]


def test_action_from_trajectory_file(tmp_path):
    _, sim_out = _run(tmp_path, "simulate", {"model": OU, "x": [1.0], "n": 10, "seed": 3}, sub="sim")
    code, out = _run(
        tmp_path,
        "action",
        {"model": OU, "x": [1.0], "trajectory_file": str(sim_out / "trajectory.csv")},
        sub="act",
    )
    assert code == 0
    rep = json.loads((out / "action_report.json").read_text())
    assert rep["finite"]
    assert rep["segments"] and len(rep["segments"]) == 10


def test_action_requires_exactly_one_source(tmp_path):
    code, _ = _run(tmp_path, "action", {"model": FREE, "x": [0.0]})
    assert code == 2


def test_minimize_halfspace(tmp_path):
    code, out = _run(
        tmp_path,
        "minimize",
        {
            "model": FREE,
            "x": [0.0],
            "m": 11,
            "terminal": {"kind": "halfspace", "normal": [1.0], "level": 2.0},
        },
    )
    assert code == 0
    rep = json.loads((out / "minimize_report.json").read_text())
    assert rep["converged"]
    assert rep["value"] == pytest.approx(2.0, abs=1e-6)
    traj_lines = (out / "minimized_trajectory.csv").read_text().strip().splitlines()
    assert len(traj_lines) == 12
    log_lines = (out / "minimize_log.csv").read_text().strip().splitlines()
    assert log_lines[0] == "iter,value,grad_norm,step"
    assert len(log_lines) >= 2


def test_minimize_point_settings_override(tmp_path):
    code, out = _run(
        tmp_path,
        "minimize",
        {
            "model": OU,
            "x": [1.0],
            "m": 9,
            "terminal": {"kind": "point", "point": [0.0]},
            "settings": {"max_iter": 200, "grad_tol": 1e-5},
        },
    )
    assert code == 0
    resolved = json.loads((out / "resolved_config.json").read_text())
    assert resolved["settings"]["max_iter"] == 200
    assert resolved["settings"]["armijo"] == pytest.approx(1e-4)


def test_estimate_naive_report_keys(tmp_path):
    code, out = _run(
        tmp_path,
        "estimate",
        {
            "model": FREE,
            "x": [0.0],
            "n": 20,
            "event": {"kind": "terminal-halfspace", "normal": [1.0], "level": 0.2},
            "samples": 2000,
            "seed": 17,
        },
    )
    assert code == 0
    rep = json.loads((out / "estimate_report.json").read_text())
    assert set(rep) == {
        "model", "event", "n", "samples", "p_hat", "stderr",
        "empirical_rate", "predicted_rate", "method", "seed",
    }
    assert rep["method"] == "naive"
    assert rep["predicted_rate"] is None


def test_estimate_tilted(tmp_path):
    code, out = _run(
        tmp_path,
        "estimate",
        {
            "model": FREE,
            "x": [0.0],
            "n": 60,
            "event": {"kind": "terminal-halfspace", "normal": [1.0], "level": 1.0},
            "samples": 4000,
            "seed": 18,
            "method": "tilted",
        },
    )
    assert code == 0
    rep = json.loads((out / "estimate_report.json").read_text())
    assert rep["method"] == "tilted"
    assert rep["predicted_rate"] == pytest.approx(0.5, abs=1e-6)
    assert rep["p_hat"] > 0


def test_estimate_tilted_rejects_smoothing_and_ball(tmp_path):
    base = {
        "model": FREE,
        "x": [0.0],
        "n": 20,
        "samples": 100,
        "seed": 0,
        "method": "tilted",
    }
    code, _ = _run(
        tmp_path,
        "estimate",
        {**base, "a": 0.5, "event": {"kind": "terminal-halfspace", "normal": [1.0], "level": 1.0}},
    )
    assert code == 2
    code, _ = _run(
        tmp_path,
        "estimate",
        {**base, "event": {"kind": "terminal-ball", "center": [2.0], "radius": 0.1}},
        sub="out2",
    )
    assert code == 2


def test_estimate_workers_byte_identical(tmp_path):
    cfg = {
        "model": OU,
        "x": [0.0],
        "n": 25,
        "event": {"kind": "terminal-halfspace", "normal": [1.0], "level": 0.2},
        "samples": 30000,
        "seed": 23,
    }
    _, out1 = _run(tmp_path, "estimate", cfg, sub="w1")
    _, out2 = _run(tmp_path, "estimate", cfg, sub="w4", extra=("--workers", "4"))
    assert (out1 / "estimate_report.json").read_bytes() == (out2 / "estimate_report.json").read_bytes()


def test_verify_martingale_passes(tmp_path):
    code, out = _run(
        tmp_path,
        "verify-martingale",
        {
            "model": OU,
            "x": [1.0],
            "n": 30,
            "a": 0.5,
            "measure": {"atoms": [{"t": 1.0, "weight": [0.6]}]},
            "samples": 20000,
            "seed": 29,
        },
    )
    assert code == 0
    rep = json.loads((out / "martingale_report.json").read_text())
    assert rep["pass"]
    assert abs(rep["mean"] - 1.0) <= 4.0 * rep["stderr"] + 1e-12


def test_verify_rate_passes_and_writes_tables(tmp_path):
    code, out = _run(
        tmp_path,
        "verify-rate",
        {
            "model": FREE,
            "x": [0.0],
            "event": {"kind": "terminal-halfspace", "normal": [1.0], "level": 1.0},
            "n_grid": [25, 50, 100],
            "samples": 20000,
            "seed": 37,
        },
    )
    assert code == 0
    rep = json.loads((out / "rate_report.json").read_text())
    assert rep["pass"]
    assert rep["predicted_rate"] == pytest.approx(0.5, abs=1e-6)
    lines = (out / "rate_estimates.csv").read_text().strip().splitlines()
    assert lines[0] == "n,samples,p_hat,stderr,empirical_rate,predicted_rate"
    assert len(lines) == 4


def test_verify_rate_event_covering_mean_is_config_error(tmp_path):
    code, _ = _run(
        tmp_path,
        "verify-rate",
        {
            "model": OU,
            "x": [1.0],
            "event": {"kind": "terminal-halfspace", "normal": [1.0], "level": 0.1},
            "n_grid": [20, 40],
            "samples": 100,
            "seed": 1,
        },
    )
    assert code == 2


def test_verify_ode_passes(tmp_path):
    code, out = _run(
        tmp_path,
        "verify-ode",
        {
            "model": OU,
            "x": [1.0],
            "epsilon": 0.35,
            "n_grid": [10, 20, 40],
            "samples": 4000,
            "seed": 43,
        },
    )
    assert code == 0
    rep = json.loads((out / "ode_report.json").read_text())
    assert rep["pass"]
    assert rep["slope"] <= -0.05
    lines = (out / "ode_rows.csv").read_text().strip().splitlines()
    assert lines[0] == "n,samples,count,q,censored"
    assert len(lines) == 4


def test_verify_ode_all_censored_fails(tmp_path):
    code, out = _run(
        tmp_path,
        "verify-ode",
        {
            "model": OU,
            "x": [1.0],
            "epsilon": 1e9,
            "n_grid": [10, 20],
            "samples": 200,
            "seed": 44,
        },
    )
    assert code == 1
    rep = json.loads((out / "ode_report.json").read_text())
    assert not rep["pass"]
    assert rep["slope"] is None


def test_blowup_exits_3(tmp_path):
    code, _ = _run(
        tmp_path,
        "simulate",
        {"model": {"preset": "logistic"}, "x": [1e8], "n": 12, "seed": 0},
    )
    assert code == 3


def test_unknown_subcommand_exits_2(tmp_path, capsys):
    assert main(["frobnicate", "--config", "x.json"]) == 2


def test_module_entry_point():
    import subprocess
    import sys

    proc = subprocess.run(
        [sys.executable, "-m", "ldscheme", "--help"], capture_output=True, text=True
    )
    assert proc.returncode == 0
    assert "simulate" in proc.stdout
