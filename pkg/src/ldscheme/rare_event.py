"""Monte Carlo estimators for rare events of the Euler scheme.

Three event families are supported: the terminal state entering a
half-space, the terminal state entering a closed ball, and the whole path
straying from a reference trajectory by at least epsilon in sup norm.

Naive estimation averages indicators.  For half-space targets under a
Gaussian-base affine model there is an exponentially tilted estimator: the
minimum-cost path into the half-space is computed first, each step of the
simulation then draws its noise with the mean shifted along that path, and
every sample carries the exact likelihood-ratio weight

    w = exp( sum_k [ cgf(X_{k-1}, alpha_k) - <F_k, alpha_k> ] ),

which makes the weighted indicator average unbiased for any deterministic
tilt sequence alpha_k.  The alpha_k are the conjugate maximizers along the
minimizing path, so for state-independent drifts they collapse to the
single dominating-point tilt.

Replication is chunked: replicas are processed in fixed blocks of
CHUNK_SIZE, block c drawing from the derived stream default_rng([seed, c])
(suites with an n-grid use [seed, grid_index, c]).  Results are therefore
bit-identical for a given seed no matter how many workers execute the
blocks.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Union

import numpy as np
from numpy.random import default_rng

from .errors import TiltUnreachableError
from . import conjugate as conj_mod
from . import kernel
from .action import ActionProblem, MinimizeSettings, TerminalHalfspace, limit_ode, minimize_action
from .kernel import AffineNoiseModel, KernelModel, perturbation_amplitude
from .scheme import (
    DualMeasure,
    SchemeRun,
    Trajectory,
    dual_pairing,
    eval_path,
    eval_path_many,
    phi_n,
    simulate,
)

CHUNK_SIZE = 20_000


@dataclass(frozen=True)
class HalfspaceEvent:
    """Terminal event {<Y(1), normal> >= level}; normal stored unit length."""

    normal: np.ndarray
    level: float

    def __post_init__(self):
        xi = np.atleast_1d(np.asarray(self.normal, dtype=np.float64))
        nrm = float(np.linalg.norm(xi))
        if nrm <= 0.0:
            raise ValueError("event normal must be nonzero")
        object.__setattr__(self, "normal", xi / nrm)
        object.__setattr__(self, "level", float(self.level) / nrm)

    def record(self) -> dict:
        return {
            "kind": "terminal-halfspace",
            "normal": [float(v) for v in self.normal],
            "level": float(self.level),
        }


@dataclass(frozen=True)
class BallEvent:
    """Terminal event {|Y(1) - center| <= radius}."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.atleast_1d(np.asarray(self.center, dtype=np.float64)))
        if self.radius <= 0.0:
            raise ValueError(f"radius must be positive, got {self.radius}")

    def record(self) -> dict:
        return {
            "kind": "terminal-ball",
            "center": [float(v) for v in self.center],
            "radius": float(self.radius),
        }


@dataclass(frozen=True)
class PathDeviationEvent:
    """Path event {sup_t |Y(t) - ref(t)| >= epsilon}.

    reference = None means the mean flow from the run's start, integrated
    at the run's own resolution.
    """

    epsilon: float
    reference: Optional[Trajectory] = None

    def __post_init__(self):
        if self.epsilon <= 0.0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")

    def record(self) -> dict:
        return {
            "kind": "sup-distance-from-path",
            "epsilon": float(self.epsilon),
            "reference": "mean-flow" if self.reference is None else "explicit",
        }


EventSpec = Union[HalfspaceEvent, BallEvent, PathDeviationEvent]


@dataclass
class EstimateReport:
    model: str
    event: dict
    n: int
    samples: int
    p_hat: float
    stderr: float
    empirical_rate: Optional[float]
    predicted_rate: Optional[float]
    method: str
    seed: int

    def to_json_dict(self) -> dict:
        return {
            "model": self.model,
            "event": self.event,
            "n": self.n,
            "samples": self.samples,
            "p_hat": self.p_hat,
            "stderr": self.stderr,
            "empirical_rate": self.empirical_rate,
            "predicted_rate": self.predicted_rate,
            "method": self.method,
            "seed": self.seed,
        }


@dataclass
class MartingaleCheck:
    mean: float
    stderr: float
    samples: int
    n: int
    a: float
    variation: float

    def to_json_dict(self) -> dict:
        return {
            "mean": self.mean,
            "stderr": self.stderr,
            "samples": self.samples,
            "n": self.n,
            "a": self.a,
            "variation": self.variation,
        }


def _chunk_sizes(samples: int) -> List[int]:
    if samples < 1:
        raise ValueError(f"samples must be >= 1, got {samples}")
    full, rest = divmod(samples, CHUNK_SIZE)
    return [CHUNK_SIZE] * full + ([rest] if rest else [])


def _map_chunks(worker, samples: int, workers: int, rng_key) -> List[np.ndarray]:
    """Run worker(rng, size) over fixed-size chunks, in chunk order.

    rng_key is the seed prefix; chunk c draws from default_rng([*rng_key, c]),
    so the result does not depend on the worker count.
    """
    sizes = _chunk_sizes(samples)
    jobs = [(c, size) for c, size in enumerate(sizes)]

    def run(job):
        c, size = job
        return worker(default_rng(list(rng_key) + [c]), size)

    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run, jobs))
    return [run(job) for job in jobs]


# ---------------------------------------------------------------------------
# batched drivers (constant-sigma affine models)

def _resolve_reference(event: PathDeviationEvent, model, x, n: int) -> Trajectory:
    if event.reference is not None:
        return event.reference
    return limit_ode(model, x, steps=n)


def _deviation_grid(ref: Trajectory, n: int):
    """Union of the scheme lattice and the reference knots, grouped by step.

    Returns (ref_on_lattice, per_step) where per_step[k] is a (fracs, refs)
    pair for the off-lattice times inside ((k-1)/n, k/n].
    """
    lattice = np.arange(n + 1) / n
    extra = np.setdiff1d(ref.times, lattice)
    ref_lattice = eval_path_many(ref, lattice)
    per_step: List[Optional[Tuple[np.ndarray, np.ndarray]]] = [None] * (n + 1)
    if len(extra):
        refs = eval_path_many(ref, extra)
        steps = np.minimum(np.ceil(extra * n - 1e-12).astype(np.int64), n)
        for k in range(1, n + 1):
            mask = steps == k
            if np.any(mask):
                fracs = extra[mask] * n - (k - 1)
                per_step[k] = (fracs, refs[mask])
    return ref_lattice, per_step


def _batch_hits(model, x, n, a, event, rng, size) -> np.ndarray:
    """Event indicators for `size` replicas, vectorized across the batch."""
    d = model.dim
    s_t = model.sigma_matrix.T
    state = np.broadcast_to(x, (size, d)).copy()
    if isinstance(event, PathDeviationEvent):
        ref = _resolve_reference(event, model, x, n)
        ref_lattice, per_step = _deviation_grid(ref, n)
        dev = np.linalg.norm(state - ref_lattice[0], axis=1)
    for k in range(1, n + 1):
        z = model.base.sample(rng, (size, d))
        g = rng.standard_normal((size, d))
        f = model.drift(state) + z @ s_t
        new_state = state + (f + a * g) / n
        if isinstance(event, PathDeviationEvent):
            extras = per_step[k]
            if extras is not None:
                fracs, refs = extras
                vals = state[:, None, :] + fracs[None, :, None] * (new_state - state)[:, None, :]
                dev = np.maximum(dev, np.linalg.norm(vals - refs[None, :, :], axis=2).max(axis=1))
            dev = np.maximum(dev, np.linalg.norm(new_state - ref_lattice[k], axis=1))
        state = new_state
    if isinstance(event, HalfspaceEvent):
        return (state @ event.normal) >= event.level
    if isinstance(event, BallEvent):
        return np.linalg.norm(state - event.center, axis=1) <= event.radius
    return dev >= event.epsilon


def _loop_hits(model, x, n, a, event, rng, size) -> np.ndarray:
    """Per-replica fallback for models without batched simulation."""
    hits = np.empty(size, dtype=bool)
    if isinstance(event, PathDeviationEvent):
        ref = _resolve_reference(event, model, x, n)
        grid = np.unique(np.concatenate([np.arange(n + 1) / n, ref.times]))
        ref_vals = eval_path_many(ref, grid)
    for i in range(size):
        traj = simulate(SchemeRun(model=model, x=x, n=n, a=a, seed=0), rng=rng)
        if isinstance(event, HalfspaceEvent):
            hits[i] = float(traj.knots[-1] @ event.normal) >= event.level
        elif isinstance(event, BallEvent):
            hits[i] = float(np.linalg.norm(traj.knots[-1] - event.center)) <= event.radius
        else:
            dev = np.linalg.norm(eval_path_many(traj, grid) - ref_vals, axis=1)
            hits[i] = float(dev.max()) >= event.epsilon
    return hits


def mc_probability(model: KernelModel, x, n: int, a, event: EventSpec, samples: int, seed: int, workers: int = 1) -> EstimateReport:
    """Plain Monte Carlo estimate of the event probability.

    p_hat is the indicator average, stderr the binomial standard error
    sqrt(p (1 - p) / samples); empirical_rate = -log(p_hat) / n is None
    when no hit was observed.
    """
    amp = perturbation_amplitude(a)
    x = kernel._as_vector(x, model.dim, "x")
    if kernel.supports_batch(model):
        worker = lambda rng, size: _batch_hits(model, x, n, amp, event, rng, size)
    else:
        worker = lambda rng, size: _loop_hits(model, x, n, amp, event, rng, size)
    hits = np.concatenate(_map_chunks(worker, samples, workers, (seed,)))
    p = float(np.mean(hits))
    stderr = float(np.sqrt(p * (1.0 - p) / samples))
    rate = float(-np.log(p) / n) if p > 0.0 else None
    return EstimateReport(
        model=model.summary,
        event=event.record(),
        n=n,
        samples=samples,
        p_hat=p,
        stderr=stderr,
        empirical_rate=rate,
        predicted_rate=None,
        method="naive",
        seed=seed,
    )


# ---------------------------------------------------------------------------
# tilted estimation

def _require_tiltable(model: KernelModel):
    if not (isinstance(model, AffineNoiseModel) and model.base.kind == "gaussian"):
        raise ValueError("tilted estimation requires an affine model with Gaussian base noise")
    if model.sigma_matrix is None or not model.drift_broadcasts:
        raise ValueError("tilted estimation requires a constant sigma and batch-capable drift")


def _tilt_plan(model, x, event: HalfspaceEvent, minimize_knots: int):
    """Minimum-cost path into the half-space and its cost (the predicted rate)."""
    flow = limit_ode(model, x, steps=256)
    drift_terminal = float(flow.knots[-1] @ event.normal)
    if drift_terminal >= event.level:
        raise ValueError(
            f"event covers the mean flow terminal (<f(1), xi> = {drift_terminal:.6g} "
            f">= {event.level:.6g}); the event is not rare, use mc_probability"
        )
    problem = ActionProblem(
        model=model,
        x=x,
        terminal=TerminalHalfspace(event.normal, event.level),
        m=minimize_knots,
        a=0.0,
    )
    res = minimize_action(problem)
    return res


def _tilt_sequence(model, path: Trajectory, n: int) -> np.ndarray:
    """Conjugate maximizers along the path, one per scheme step."""
    m_seg = path.n
    alphas = np.empty((n, model.dim))
    warm = None
    for k in range(n):
        t = k / n
        seg = min(int(np.floor(t * m_seg)), m_seg - 1)
        v = (path.knots[seg + 1] - path.knots[seg]) * m_seg
        y = eval_path(path, t)
        res = conj_mod.fenchel(model, y, v, x0=warm)
        if res.status != conj_mod.CONVERGED:
            raise TiltUnreachableError(
                f"tilt solve along the minimizing path failed at step {k + 1} (status {res.status})"
            )
        alphas[k] = res.argmax
        warm = res.argmax
    return alphas


def _batch_tilted(model, x, n, event: HalfspaceEvent, alphas, rng, size) -> np.ndarray:
    """Weighted indicators w * 1_A for `size` tilted replicas."""
    d = model.dim
    s_t = model.sigma_matrix.T
    shifts = alphas @ model.sigma_matrix  # row k holds sigma^T alpha_k
    log_norms = 0.5 * np.sum(shifts * shifts, axis=1)  # logmgf(sigma^T alpha_k)
    state = np.broadcast_to(x, (size, d)).copy()
    logw = np.zeros(size)
    for k in range(1, n + 1):
        alpha = alphas[k - 1]
        z = rng.standard_normal((size, d)) + shifts[k - 1]
        f = model.drift(state) + z @ s_t
        logw += (model.drift(state) @ alpha + log_norms[k - 1]) - f @ alpha
        state = state + f / n
    hits = (state @ event.normal) >= event.level
    return np.exp(logw) * hits


def _tilted_estimate(model, x, n, event, samples, seed, workers, plan) -> EstimateReport:
    alphas = _tilt_sequence(model, plan.trajectory, n)
    worker = lambda rng, size: _batch_tilted(model, x, n, event, alphas, rng, size)
    vals = np.concatenate(_map_chunks(worker, samples, workers, seed))
    p = float(np.mean(vals))
    stderr = float(np.std(vals, ddof=1) / np.sqrt(samples))
    rate = float(-np.log(p) / n) if p > 0.0 else None
    return EstimateReport(
        model=model.summary,
        event=event.record(),
        n=n,
        samples=samples,
        p_hat=p,
        stderr=stderr,
        empirical_rate=rate,
        predicted_rate=float(plan.action.value),
        method="tilted",
        seed=seed[0],
    )


def tilted_mc_probability(
    model: KernelModel,
    x,
    n: int,
    event: HalfspaceEvent,
    samples: int,
    seed: int,
    workers: int = 1,
    minimize_knots: int = 21,
) -> EstimateReport:
    """Importance-sampled estimate of a rare half-space terminal event.

    The noise mean is shifted along the minimum-cost path into the target
    and each sample carries the exact likelihood-ratio weight, so the
    estimate is unbiased whatever the tilt quality.  Requires a Gaussian
    base and an event whose half-space excludes the mean flow terminal.
    """
    if not isinstance(event, HalfspaceEvent):
        raise ValueError("tilted estimation only covers terminal half-space events")
    _require_tiltable(model)
    x = kernel._as_vector(x, model.dim, "x")
    plan = _tilt_plan(model, x, event, minimize_knots)
    return _tilted_estimate(model, x, n, event, samples, (seed,), workers, plan)


# ---------------------------------------------------------------------------
# exponential normalization check

def _batch_martingale(model, x, n, a, alphas, log_norms, sq_norms, rng, size) -> np.ndarray:
    d = model.dim
    s_t = model.sigma_matrix.T
    state = np.broadcast_to(x, (size, d)).copy()
    acc = np.zeros(size)
    for k in range(1, n + 1):
        alpha = alphas[k - 1]
        z = model.base.sample(rng, (size, d))
        g = rng.standard_normal((size, d))
        f = model.drift(state) + z @ s_t
        pay = (f + a * g) @ alpha
        price = model.drift(state) @ alpha + log_norms[k - 1] + 0.5 * a * a * sq_norms[k - 1]
        acc += pay - price
        state = state + (f + a * g) / n
    return np.exp(acc)


def _loop_martingale(model, x, n, a, lam, rng, size) -> np.ndarray:
    out = np.empty(size)
    for i in range(size):
        traj = simulate(SchemeRun(model=model, x=x, n=n, a=a, seed=0), rng=rng)
        out[i] = np.exp(dual_pairing(traj, lam) - phi_n(model, x, a, traj, lam))
    return out


def martingale_check(
    model: KernelModel,
    x,
    n: int,
    a,
    lam: DualMeasure,
    samples: int,
    seed: int,
    workers: int = 1,
    max_variation: float = 2.0,
) -> MartingaleCheck:
    """Empirical mean and stderr of exp[<path, lam> - dual_functional_n].

    The population mean is exactly 1 for every model, resolution, smoothing
    level, and atomic lam.  Large measures make the integrand heavy tailed,
    so the total variation of lam is capped (default 2.0, caller tunable).
    """
    amp = perturbation_amplitude(a)
    x = kernel._as_vector(x, model.dim, "x")
    variation = lam.variation()
    if variation > max_variation:
        raise ValueError(
            f"dual measure variation {variation:.3g} exceeds the cap {max_variation:.3g}; "
            "raise max_variation knowingly if the heavy tail is acceptable"
        )
    if kernel.supports_batch(model):
        alphas = lam.basis_integrals(n) / n
        rows = alphas @ model.sigma_matrix
        log_norms = np.asarray(model.base.logmgf(rows), dtype=np.float64)
        log_norms[np.all(rows == 0.0, axis=1)] = 0.0  # exact when sigma^T alpha vanishes
        sq_norms = np.sum(alphas * alphas, axis=1)
        worker = lambda rng, size: _batch_martingale(model, x, n, amp, alphas, log_norms, sq_norms, rng, size)
    else:
        worker = lambda rng, size: _loop_martingale(model, x, n, amp, lam, rng, size)
    vals = np.concatenate(_map_chunks(worker, samples, workers, (seed,)))
    mean = float(np.mean(vals))
    stderr = float(np.std(vals, ddof=1) / np.sqrt(samples)) if samples > 1 else 0.0
    return MartingaleCheck(mean=mean, stderr=stderr, samples=samples, n=n, a=amp, variation=variation)


# ---------------------------------------------------------------------------
# verification suites

@dataclass
class RateReport:
    model: str
    event: dict
    n_grid: List[int]
    estimates: List[EstimateReport]
    predicted_rate: float
    rel_gaps: List[Optional[float]]
    trend_violations: List[dict]
    minimize_converged: bool

    def to_json_dict(self) -> dict:
        return {
            "model": self.model,
            "event": self.event,
            "n_grid": self.n_grid,
            "estimates": [r.to_json_dict() for r in self.estimates],
            "predicted_rate": self.predicted_rate,
            "rel_gaps": self.rel_gaps,
            "trend_violations": self.trend_violations,
            "minimize_converged": self.minimize_converged,
        }


def verify_rate(
    model: KernelModel,
    x,
    event: HalfspaceEvent,
    n_grid: List[int],
    samples: int,
    seed: int,
    workers: int = 1,
    minimize_knots: int = 21,
) -> RateReport:
    """Compare -log(p_n)/n against the minimized path cost across an n-grid.

    Uses the tilted estimator at every n (one shared minimizing path).
    Trend accounting: the absolute gap should shrink as n doubles; an
    increase is recorded as a violation, excused when it sits within two
    combined standard errors of the rates involved.
    """
    if not isinstance(event, HalfspaceEvent):
        raise ValueError("rate verification targets terminal half-space events")
    _require_tiltable(model)
    x = kernel._as_vector(x, model.dim, "x")
    if len(n_grid) < 1:
        raise ValueError("n_grid must be nonempty")
    plan = _tilt_plan(model, x, event, minimize_knots)
    predicted = float(plan.action.value)
    estimates = []
    for idx, n in enumerate(n_grid):
        estimates.append(_tilted_estimate(model, x, n, event, samples, (seed, idx), workers, plan))
    rel_gaps = []
    rate_ses = []
    for rep in estimates:
        if rep.empirical_rate is None:
            rel_gaps.append(None)
            rate_ses.append(None)
        else:
            rel_gaps.append(abs(rep.empirical_rate - predicted) / abs(predicted))
            rate_ses.append(rep.stderr / (rep.p_hat * rep.n))
    violations = []
    for i in range(len(n_grid) - 1):
        if rel_gaps[i] is None or rel_gaps[i + 1] is None:
            continue
        if rel_gaps[i + 1] > rel_gaps[i]:
            combined = np.hypot(rate_ses[i], rate_ses[i + 1])
            increase = (rel_gaps[i + 1] - rel_gaps[i]) * abs(predicted)
            violations.append(
                {
                    "n_prev": n_grid[i],
                    "n_next": n_grid[i + 1],
                    "gap_increase": float(increase),
                    "excused": bool(increase <= 2.0 * combined),
                }
            )
    return RateReport(
        model=model.summary,
        event=event.record(),
        n_grid=list(n_grid),
        estimates=estimates,
        predicted_rate=predicted,
        rel_gaps=rel_gaps,
        trend_violations=violations,
        minimize_converged=plan.converged,
    )


@dataclass
class OdeReport:
    model: str
    epsilon: float
    n_grid: List[int]
    rows: List[dict]
    slope: Optional[float]
    intercept: Optional[float]
    monotone_ok: Optional[bool]
    censored: List[int]

    def to_json_dict(self) -> dict:
        return {
            "model": self.model,
            "epsilon": self.epsilon,
            "n_grid": self.n_grid,
            "rows": self.rows,
            "slope": self.slope,
            "intercept": self.intercept,
            "monotone_ok": self.monotone_ok,
            "censored": self.censored,
        }


def verify_ode_convergence(
    model: KernelModel,
    x,
    epsilon: float,
    n_grid: List[int],
    samples: int,
    seed: int,
    workers: int = 1,
) -> OdeReport:
    """Estimate q_n = P{sup |Y_n - mean flow| >= epsilon} across an n-grid.

    Grid points with zero hits are censored: they are reported but excluded
    from the log-linear fit and the monotonicity verdict.  slope is the
    least-squares slope of log q_n against n over the surviving points
    (None when fewer than two survive).
    """
    x = kernel._as_vector(x, model.dim, "x")
    rows = []
    censored = []
    pts = []
    for idx, n in enumerate(n_grid):
        event = PathDeviationEvent(epsilon=epsilon)
        amp = 0.0
        if kernel.supports_batch(model):
            worker = lambda rng, size: _batch_hits(model, x, n, amp, event, rng, size)
        else:
            worker = lambda rng, size: _loop_hits(model, x, n, amp, event, rng, size)
        hits = np.concatenate(_map_chunks(worker, samples, workers, (seed, idx)))
        count = int(np.sum(hits))
        q = count / samples
        is_censored = count == 0
        rows.append({"n": n, "samples": samples, "count": count, "q": q, "censored": is_censored})
        if is_censored:
            censored.append(n)
        else:
            pts.append((n, np.log(q)))
    slope = intercept = None
    if len(pts) >= 2:
        ns = np.array([p[0] for p in pts], dtype=np.float64)
        ls = np.array([p[1] for p in pts])
        slope_, intercept_ = np.polyfit(ns, ls, 1)
        slope, intercept = float(slope_), float(intercept_)
    qs = [r["q"] for r in rows if not r["censored"]]
    monotone_ok = all(b < a for a, b in zip(qs, qs[1:])) if len(qs) >= 2 else None
    return OdeReport(
        model=model.summary,
        epsilon=float(epsilon),
        n_grid=list(n_grid),
        rows=rows,
        slope=slope,
        intercept=intercept,
        monotone_ok=monotone_ok,
        censored=censored,
    )
