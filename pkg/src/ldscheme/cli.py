"""Command line front end.

Every subcommand reads a strict JSON config (unknown keys are errors,
reported with their full path) and writes its outputs plus the fully
resolved config, defaults included, into the --out directory.  Identical
configs produce byte-identical outputs; seeds are explicit wherever
randomness is involved.

Subcommands:
  simulate           one trajectory -> trajectory.csv
  action             path cost of a stored trajectory -> action_report.json
  minimize           minimum-cost path to a terminal constraint
  estimate           rare-event probability, naive or tilted
  verify-martingale  exponential normalization check
  verify-rate        decay-rate comparison across an n-grid
  verify-ode         small-noise collapse onto the mean flow

Exit codes: 0 success, 1 verification suite failed its assertion,
2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import kernel
from .action import (
    ActionProblem,
    MinimizeSettings,
    TerminalHalfspace,
    TerminalPoint,
    action,
    minimize_action,
)
from .errors import NumericalFailure
from .rare_event import (
    BallEvent,
    HalfspaceEvent,
    PathDeviationEvent,
    martingale_check,
    mc_probability,
    tilted_mc_probability,
    verify_ode_convergence,
    verify_rate,
)
from .scheme import (
    DualMeasure,
    SchemeRun,
    Trajectory,
    load_trajectory,
    save_trajectory,
    simulate,
)


class ConfigError(Exception):
    pass


_MISSING = object()


def _as_int(v, path):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{path}: expected an integer, got {v!r}")
    return v


def _as_float(v, path):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {v!r}")
    return float(v)


def _as_str(v, path):
    if not isinstance(v, str):
        raise ConfigError(f"{path}: expected a string, got {v!r}")
    return v


def _as_vector(v, path):
    """A scalar or a flat list of numbers; returned in JSON form."""
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return float(v)
    if isinstance(v, list) and v and all(
        isinstance(u, (int, float)) and not isinstance(u, bool) for u in v
    ):
        return [float(u) for u in v]
    raise ConfigError(f"{path}: expected a number or a list of numbers, got {v!r}")


def _as_int_list(v, path):
    if not (isinstance(v, list) and v and all(isinstance(u, int) and not isinstance(u, bool) for u in v)):
        raise ConfigError(f"{path}: expected a nonempty list of integers, got {v!r}")
    return list(v)


def _as_list(v, path):
    if not isinstance(v, list):
        raise ConfigError(f"{path}: expected a list, got {v!r}")
    return v


def _as_dict(v, path):
    if not isinstance(v, dict):
        raise ConfigError(f"{path}: expected an object, got {v!r}")
    return v


class _Conf:
    """Strict view of one JSON object: every key must be taken exactly once."""

    def __init__(self, data, path):
        self.data = _as_dict(data, path)
        self.path = path
        self.used = set()
        self.resolved = {}

    def take(self, key, cast, default=_MISSING):
        self.used.add(key)
        if key not in self.data:
            if default is _MISSING:
                raise ConfigError(f"missing required key '{self.path}.{key}'")
            self.resolved[key] = default
            return default
        value = cast(self.data[key], f"{self.path}.{key}")
        self.resolved[key] = value
        return value

    def take_raw(self, key):
        self.used.add(key)
        if key not in self.data:
            raise ConfigError(f"missing required key '{self.path}.{key}'")
        self.resolved[key] = self.data[key]
        return self.data[key]

    def sub(self, key, default=_MISSING):
        self.used.add(key)
        if key not in self.data:
            if default is _MISSING:
                raise ConfigError(f"missing required key '{self.path}.{key}'")
            sub = _Conf(dict(default), f"{self.path}.{key}")
        else:
            sub = _Conf(self.data[key], f"{self.path}.{key}")
        self.resolved[key] = sub.resolved
        return sub

    def close(self):
        unknown = sorted(set(self.data) - self.used)
        if unknown:
            raise ConfigError(f"unknown key '{self.path}.{unknown[0]}'")


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.floating, float)):
        value = float(value)
        if np.isnan(value):
            return "nan"
        if np.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.bool_,)):
        return bool(value)
    return value


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _model_from(c: _Conf):
    raw = c.take_raw("model")
    model = kernel.model_from_config(raw, path=f"{c.path}.model")
    return model


def _terminal_from(c: _Conf):
    t = c.sub("terminal")
    kind = t.take("kind", _as_str)
    if kind == "point":
        point = t.take("point", _as_vector)
        tol = t.take("tolerance", _as_float, 0.0)
        t.close()
        return TerminalPoint(point=point, tolerance=tol)
    if kind == "halfspace":
        normal = t.take("normal", _as_vector)
        level = t.take("level", _as_float)
        t.close()
        return TerminalHalfspace(normal=normal, level=level)
    raise ConfigError(f"{t.path}.kind: unknown terminal kind {kind!r}")


def _event_from(c: _Conf, dim: int):
    e = c.sub("event")
    kind = e.take("kind", _as_str)
    if kind == "terminal-halfspace":
        normal = e.take("normal", _as_vector)
        level = e.take("level", _as_float)
        e.close()
        return HalfspaceEvent(normal=normal, level=level)
    if kind == "terminal-ball":
        center = e.take("center", _as_vector)
        radius = e.take("radius", _as_float)
        e.close()
        return BallEvent(center=center, radius=radius)
    if kind == "sup-distance-from-path":
        epsilon = e.take("epsilon", _as_float)
        ref_file = e.take("reference_file", _as_str, None)
        e.close()
        ref = load_trajectory(ref_file) if ref_file else None
        return PathDeviationEvent(epsilon=epsilon, reference=ref)
    raise ConfigError(f"{e.path}.kind: unknown event kind {kind!r}")


def _measure_from(c: _Conf, dim: int) -> DualMeasure:
    m = c.sub("measure")
    atoms = m.take("atoms", _as_list)
    m.close()
    if not atoms:
        return DualMeasure.zero(dim)
    pairs = []
    for j, rec in enumerate(atoms):
        a = _Conf(rec, f"{m.path}.atoms[{j}]")
        t = a.take("t", _as_float)
        w = a.take("weight", _as_vector)
        a.close()
        wv = np.atleast_1d(np.asarray(w, dtype=np.float64))
        if wv.shape != (dim,):
            raise ConfigError(f"{m.path}.atoms[{j}].weight: expected {dim} components, got {wv.shape}")
        pairs.append((t, wv))
    return DualMeasure.from_atoms(pairs)


def _minimize_settings_from(c: _Conf) -> MinimizeSettings:
    s = c.sub("settings", default={})
    settings = MinimizeSettings(
        max_iter=s.take("max_iter", _as_int, 500),
        grad_tol=s.take("grad_tol", _as_float, 1e-6),
        y_fd_step=s.take("y_fd_step", _as_float, 1e-5),
        armijo=s.take("armijo", _as_float, 1e-4),
        max_halvings=s.take("max_halvings", _as_int, 40),
    )
    s.close()
    return settings


# ---------------------------------------------------------------------------
# subcommands

def _cmd_simulate(cfg, out, workers):
    c = _Conf(cfg, "config")
    model = _model_from(c)
    x = c.take("x", _as_vector)
    n = c.take("n", _as_int)
    a = c.take("a", _as_float, 0.0)
    seed = c.take("seed", _as_int)
    c.close()
    _write_json(os.path.join(out, "resolved_config.json"), {"command": "simulate", **c.resolved})
    traj = simulate(SchemeRun(model=model, x=x, n=n, a=a, seed=seed))
    save_trajectory(traj, os.path.join(out, "trajectory.csv"))
    return 0


def _cmd_action(cfg, out, workers):
    c = _Conf(cfg, "config")
    model = _model_from(c)
    x = c.take("x", _as_vector)
    a = c.take("a", _as_float, 0.0)
    traj_file = c.take("trajectory_file", _as_str, None)
    knots = c.take("knots", _as_list, None)
    c.close()
    if (traj_file is None) == (knots is None):
        raise ConfigError("config: give exactly one of 'trajectory_file' and 'knots'")
    _write_json(os.path.join(out, "resolved_config.json"), {"command": "action", **c.resolved})
    traj = load_trajectory(traj_file) if traj_file else Trajectory(np.asarray(knots, dtype=np.float64))
    val = action(model, x, a, traj)
    report = {
        "value": val.value,
        "finite": bool(np.isfinite(val.value)),
        "reason": val.reason,
        "segments": list(val.segments),
        "feasible_start": val.feasible_start,
        "divergent_segments": val.divergent_segments,
        "solver_warnings": len(val.solver_warnings),
        "a": a,
        "model": model.summary,
    }
    _write_json(os.path.join(out, "action_report.json"), report)
    return 0


def _cmd_minimize(cfg, out, workers):
    c = _Conf(cfg, "config")
    model = _model_from(c)
    x = c.take("x", _as_vector)
    a = c.take("a", _as_float, 0.0)
    m = c.take("m", _as_int, 21)
    terminal = _terminal_from(c)
    settings = _minimize_settings_from(c)
    c.close()
    _write_json(os.path.join(out, "resolved_config.json"), {"command": "minimize", **c.resolved})
    res = minimize_action(ActionProblem(model=model, x=x, terminal=terminal, m=m, a=a, settings=settings))
    save_trajectory(res.trajectory, os.path.join(out, "minimized_trajectory.csv"))
    _write_csv(
        os.path.join(out, "minimize_log.csv"),
        ["iter", "value", "grad_norm", "step"],
        res.log,
    )
    terminal_rec = (
        {"kind": "point", "point": list(terminal.point), "tolerance": terminal.tolerance}
        if isinstance(terminal, TerminalPoint)
        else {"kind": "halfspace", "normal": list(terminal.normal), "level": terminal.level}
    )
    report = {
        "value": res.action.value,
        "converged": res.converged,
        "grad_norm": res.grad_norm,
        "iterations": res.iterations,
        "warnings": res.warnings,
        "terminal": terminal_rec,
        "m": m,
        "a": a,
        "model": model.summary,
    }
    _write_json(os.path.join(out, "minimize_report.json"), report)
    return 0


def _cmd_estimate(cfg, out, workers):
    c = _Conf(cfg, "config")
    model = _model_from(c)
    x = c.take("x", _as_vector)
    n = c.take("n", _as_int)
    a = c.take("a", _as_float, 0.0)
    event = _event_from(c, model.dim)
    samples = c.take("samples", _as_int)
    seed = c.take("seed", _as_int)
    method = c.take("method", _as_str, "naive")
    minimize_knots = c.take("minimize_knots", _as_int, 21)
    c.close()
    if method not in ("naive", "tilted"):
        raise ConfigError(f"config.method: expected 'naive' or 'tilted', got {method!r}")
    _write_json(os.path.join(out, "resolved_config.json"), {"command": "estimate", **c.resolved})
    if method == "naive":
        report = mc_probability(model, x, n, a, event, samples, seed, workers=workers)
    else:
        if a != 0.0:
            raise ConfigError("config.a: the tilted estimator runs the unsmoothed scheme; set a to 0")
        if not isinstance(event, HalfspaceEvent):
            raise ConfigError("config.event.kind: the tilted estimator needs 'terminal-halfspace'")
        report = tilted_mc_probability(
            model, x, n, event, samples, seed, workers=workers, minimize_knots=minimize_knots
        )
    _write_json(os.path.join(out, "estimate_report.json"), report.to_json_dict())
    return 0


def _cmd_verify_martingale(cfg, out, workers):
    c = _Conf(cfg, "config")
    model = _model_from(c)
    x = c.take("x", _as_vector)
    n = c.take("n", _as_int)
    a = c.take("a", _as_float, 0.0)
    lam = _measure_from(c, model.dim)
    samples = c.take("samples", _as_int)
    seed = c.take("seed", _as_int)
    max_variation = c.take("max_variation", _as_float, 2.0)
    tolerance_stderr = c.take("tolerance_stderr", _as_float, 4.0)
    c.close()
    _write_json(os.path.join(out, "resolved_config.json"), {"command": "verify-martingale", **c.resolved})
    check = martingale_check(
        model, x, n, a, lam, samples, seed, workers=workers, max_variation=max_variation
    )
    ok = abs(check.mean - 1.0) <= tolerance_stderr * check.stderr + 1e-12
    report = {
        **check.to_json_dict(),
        "model": model.summary,
        "tolerance_stderr": tolerance_stderr,
        "pass": ok,
    }
    _write_json(os.path.join(out, "martingale_report.json"), report)
    return 0 if ok else 1


def _cmd_verify_rate(cfg, out, workers):
    c = _Conf(cfg, "config")
    model = _model_from(c)
    x = c.take("x", _as_vector)
    event = _event_from(c, model.dim)
    n_grid = c.take("n_grid", _as_int_list)
    samples = c.take("samples", _as_int)
    seed = c.take("seed", _as_int)
    minimize_knots = c.take("minimize_knots", _as_int, 21)
    max_rel_gap = c.take("max_rel_gap", _as_float, 0.15)
    c.close()
    if not isinstance(event, HalfspaceEvent):
        raise ConfigError("config.event.kind: rate verification needs 'terminal-halfspace'")
    _write_json(os.path.join(out, "resolved_config.json"), {"command": "verify-rate", **c.resolved})
    report = verify_rate(
        model, x, event, n_grid, samples, seed, workers=workers, minimize_knots=minimize_knots
    )
    final_gap = next((g for g in reversed(report.rel_gaps) if g is not None), None)
    unexcused = [v for v in report.trend_violations if not v["excused"]]
    ok = (
        report.minimize_converged
        and final_gap is not None
        and final_gap <= max_rel_gap
        and not unexcused
        and len(report.trend_violations) <= 1
    )
    payload = {**report.to_json_dict(), "max_rel_gap": max_rel_gap, "final_rel_gap": final_gap, "pass": ok}
    _write_json(os.path.join(out, "rate_report.json"), payload)
    _write_csv(
        os.path.join(out, "rate_estimates.csv"),
        ["n", "samples", "p_hat", "stderr", "empirical_rate", "predicted_rate"],
        [
            [r.n, r.samples, r.p_hat, r.stderr,
             "" if r.empirical_rate is None else r.empirical_rate, r.predicted_rate]
            for r in report.estimates
        ],
    )
    return 0 if ok else 1


def _cmd_verify_ode(cfg, out, workers):
    c = _Conf(cfg, "config")
    model = _model_from(c)
    x = c.take("x", _as_vector)
    epsilon = c.take("epsilon", _as_float)
    n_grid = c.take("n_grid", _as_int_list)
    samples = c.take("samples", _as_int)
    seed = c.take("seed", _as_int)
    max_slope = c.take("max_slope", _as_float, -0.05)
    c.close()
    _write_json(os.path.join(out, "resolved_config.json"), {"command": "verify-ode", **c.resolved})
    report = verify_ode_convergence(model, x, epsilon, n_grid, samples, seed, workers=workers)
    ok = (
        report.slope is not None
        and report.slope <= max_slope
        and report.monotone_ok is not False
    )
    payload = {**report.to_json_dict(), "max_slope": max_slope, "pass": ok}
    _write_json(os.path.join(out, "ode_report.json"), payload)
    _write_csv(
        os.path.join(out, "ode_rows.csv"),
        ["n", "samples", "count", "q", "censored"],
        [[r["n"], r["samples"], r["count"], r["q"], r["censored"]] for r in report.rows],
    )
    return 0 if ok else 1


_COMMANDS = {
    "simulate": (_cmd_simulate, "simulate one trajectory and write it as CSV"),
    "action": (_cmd_action, "evaluate the path cost of a stored trajectory"),
    "minimize": (_cmd_minimize, "minimize the path cost under a terminal constraint"),
    "estimate": (_cmd_estimate, "estimate a rare-event probability (naive or tilted)"),
    "verify-martingale": (_cmd_verify_martingale, "check the exponential normalization identity"),
    "verify-rate": (_cmd_verify_rate, "compare empirical decay rates with the minimized cost"),
    "verify-ode": (_cmd_verify_ode, "check the small-noise collapse onto the mean flow"),
}


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="ldscheme",
        description="Euler scheme simulation, path costs, and rare-event estimation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in _COMMANDS.items():
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", required=True, help="path to the JSON config")
        sp.add_argument("--out", default=".", help="output directory (default: current)")
        sp.add_argument("--workers", type=int, default=1, help="thread count for replica chunks")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        with open(args.config) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        print(f"config error: cannot read {args.config}: {exc}", file=sys.stderr)
        return 2
    except json.JSONDecodeError as exc:
        print(f"config error: {args.config} is not valid JSON: {exc}", file=sys.stderr)
        return 2
    if args.workers < 1:
        print("config error: --workers must be >= 1", file=sys.stderr)
        return 2
    os.makedirs(args.out, exist_ok=True)
    handler = _COMMANDS[args.command][0]
    try:
        return handler(cfg, args.out, args.workers)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_main()
