"""Euler recursions on [0, 1] and their duality bookkeeping.

The scheme advances n uniform steps of size 1/n,

    X_k = X_{k-1} + (F_k(X_{k-1}) + a g_k) / n,

with F_k drawn from the model's increment law at the current state and g_k
fresh standard Gaussians scaled by the smoothing amplitude a.  The knots are
read as a piecewise-linear path on [0, 1] through the tent basis

    phi_{n,i}(t) = clip(n t - (i - 1), 0, 1),

so that path(t) = x + sum_i (X_i - X_{i-1}) phi_{n,i}(t).

Against an atomic vector measure lam = sum_j alpha_j delta_{t_j} the scheme
satisfies an exact exponential normalization: with

    dual_functional_n(path, lam)
        = <x, lam([0,1])> + sum_i cgf_a(X_{i-1}, beta_i / n),
    beta_i = sum_j alpha_j phi_{n,i}(t_j),

the mean of exp[<path, lam> - dual_functional_n(path, lam)] over runs is
exactly 1.  Its n -> inf limit is

    dual_functional_limit(f, lam)
        = <x, lam([0,1])> + int_0^1 cgf_a(f(s), lam([s, 1])) ds,

approached at rate O(1/n) after rescaling lam by n (see scaling tests).

Draw discipline: each step consumes the model draw first and then the
Gaussian smoothing draw, whether or not a = 0, so runs at different
amplitudes couple pathwise under a shared seed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss
from numpy.random import Generator, default_rng

from .errors import SimulationBlowup
from . import kernel
from .kernel import KernelModel, perturbation_amplitude

_SNAP = 1e-12


def gauss_legendre_01(order: int = 5):
    """Nodes and weights on [0, 1]; weights sum to 1."""
    x, w = leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w


@dataclass(frozen=True)
class Trajectory:
    """Piecewise-linear path with n + 1 uniformly spaced knots on [0, 1]."""

    knots: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.knots, dtype=np.float64)
        if k.ndim == 1:
            k = k[:, None]
        if k.ndim != 2 or k.shape[0] < 2:
            raise ValueError(f"knots must be (n+1, d) with n >= 1, got shape {np.shape(self.knots)}")
        object.__setattr__(self, "knots", k)

    @property
    def n(self) -> int:
        return self.knots.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.knots.shape[1]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n + 1) / self.n


def basis_phi(n: int, i: int, t: float) -> float:
    """Tent basis value phi_{n,i}(t): ramp on [(i-1)/n, i/n], then 1."""
    if not 1 <= i <= n:
        raise ValueError(f"basis index must satisfy 1 <= i <= n, got i={i}, n={n}")
    return float(np.clip(n * t - (i - 1), 0.0, 1.0))


def eval_path(traj: Trajectory, t: float) -> np.ndarray:
    """Evaluate the path at t in [0, 1]; knot times reproduce knots exactly."""
    if t < 0.0 or t > 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    n = traj.n
    kf = t * n
    k = min(int(np.floor(kf)), n - 1)
    theta = kf - k
    # snap to the lattice so t = k/n returns the knot bit for bit
    if theta < _SNAP:
        return traj.knots[k].copy()
    if theta > 1.0 - _SNAP:
        return traj.knots[k + 1].copy()
    return (1.0 - theta) * traj.knots[k] + theta * traj.knots[k + 1]


def eval_path_many(traj: Trajectory, ts: np.ndarray) -> np.ndarray:
    """Vectorized eval_path over an array of times, shape (m,) -> (m, d)."""
    ts = np.asarray(ts, dtype=np.float64)
    if np.any(ts < 0.0) or np.any(ts > 1.0):
        raise ValueError("all times must lie in [0, 1]")
    n = traj.n
    kf = ts * n
    k = np.minimum(np.floor(kf).astype(np.int64), n - 1)
    theta = kf - k
    theta = np.where(theta < _SNAP, 0.0, theta)
    theta = np.where(theta > 1.0 - _SNAP, 1.0, theta)
    return (1.0 - theta)[:, None] * traj.knots[k] + theta[:, None] * traj.knots[k + 1]


def resample(traj: Trajectory, n: int) -> Trajectory:
    """Re-knot the path on the uniform n-lattice (exact when grids nest)."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return Trajectory(eval_path_many(traj, np.arange(n + 1) / n))


def modulus(traj: Trajectory, delta: float) -> float:
    """Sup of |f(t) - f(s)| over |t - s| <= delta.

    For a piecewise-linear path the sup is attained either at a pair of
    knots or at a pair (knot, knot +- delta), so the scan below is exact.
    """
    if delta <= 0.0:
        raise ValueError(f"delta must be positive, got {delta}")
    n, knots = traj.n, traj.knots
    m_max = min(n, int(np.floor(delta * n + 1e-9)))
    worst = 0.0
    for m in range(1, m_max + 1):
        d = knots[m:] - knots[:-m]
        worst = max(worst, float(np.max(np.linalg.norm(d, axis=1))))
    times = traj.times
    for shifted in (times + delta, times - delta):
        mask = (shifted >= 0.0) & (shifted <= 1.0)
        if not np.any(mask):
            continue
        vals = eval_path_many(traj, shifted[mask])
        d = vals - knots[mask]
        worst = max(worst, float(np.max(np.linalg.norm(d, axis=1))))
    return worst


@dataclass(frozen=True)
class DualMeasure:
    """Atomic vector measure sum_j alpha_j delta_{t_j} on [0, 1]."""

    times: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        t = np.atleast_1d(np.asarray(self.times, dtype=np.float64))
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim == 1:
            w = w[:, None] if len(t) == len(w) else w[None, :]
        if t.ndim != 1 or w.shape[0] != t.shape[0]:
            raise ValueError(f"times {t.shape} and weights {w.shape} do not align")
        if len(t) and (t.min() < 0.0 or t.max() > 1.0):
            raise ValueError("atom times must lie in [0, 1]")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(w))):
            raise ValueError("atoms must be finite")
        order = np.argsort(t, kind="stable")
        object.__setattr__(self, "times", t[order])
        object.__setattr__(self, "weights", w[order])

    @classmethod
    def zero(cls, dim: int) -> "DualMeasure":
        return cls(np.empty(0), np.empty((0, dim)))

    @classmethod
    def point_mass(cls, t: float, weight) -> "DualMeasure":
        w = np.atleast_1d(np.asarray(weight, dtype=np.float64))
        return cls(np.array([t]), w[None, :])

    @classmethod
    def from_atoms(cls, atoms: Iterable) -> "DualMeasure":
        atoms = list(atoms)
        if not atoms:
            raise ValueError("from_atoms needs at least one atom; use zero(dim) for the empty measure")
        ts = np.array([a[0] for a in atoms], dtype=np.float64)
        ws = np.stack([np.atleast_1d(np.asarray(a[1], dtype=np.float64)) for a in atoms])
        return cls(ts, ws)

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def total_mass(self) -> np.ndarray:
        """lam([0, 1]), the vector sum of all atom weights."""
        return self.weights.sum(axis=0) if len(self.times) else np.zeros(self.dim)

    def variation(self) -> float:
        return float(np.sum(np.linalg.norm(self.weights, axis=1))) if len(self.times) else 0.0

    def tail(self, s: float) -> np.ndarray:
        """lam([s, 1]), closed at s."""
        if not len(self.times):
            return np.zeros(self.dim)
        return self.weights[self.times >= s].sum(axis=0)

    def scaled(self, factor: float) -> "DualMeasure":
        return DualMeasure(self.times.copy(), factor * self.weights)

    def basis_integrals(self, n: int) -> np.ndarray:
        """Row i-1 holds int phi_{n,i} d lam = sum_j alpha_j phi_{n,i}(t_j)."""
        if not len(self.times):
            return np.zeros((n, self.dim))
        i = np.arange(1, n + 1)[:, None]
        phi = np.clip(n * self.times[None, :] - (i - 1), 0.0, 1.0)
        return phi @ self.weights

    def to_records(self):
        return [{"t": float(t), "weight": [float(v) for v in w]} for t, w in zip(self.times, self.weights)]

    @classmethod
    def from_records(cls, records, dim: int) -> "DualMeasure":
        if not records:
            return cls.zero(dim)
        return cls.from_atoms([(r["t"], r["weight"]) for r in records])


@dataclass(frozen=True)
class SchemeRun:
    """One fully specified simulation: model, start, resolution, smoothing, seed."""

    model: KernelModel
    x: np.ndarray
    n: int
    a: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "x", kernel._as_vector(self.x, self.model.dim, "x"))
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        object.__setattr__(self, "a", perturbation_amplitude(self.a))


def dual_pairing(traj: Trajectory, lam: DualMeasure) -> float:
    """<path, lam> = sum_j <path(t_j), alpha_j>."""
    if not len(lam.times):
        return 0.0
    vals = eval_path_many(traj, lam.times)
    return float(np.sum(vals * lam.weights))


def replica_rng(seed: int, index: int) -> Generator:
    """Derived stream for replica or chunk `index` of a seeded experiment."""
    return default_rng([seed, index])


def simulate(run: SchemeRun, rng: Generator = None) -> Trajectory:
    """Simulate one path of the scheme; bit-reproducible for a fixed seed.

    Raises SimulationBlowup with the offending step index if the state
    leaves the representable range.
    """
    rng = rng if rng is not None else default_rng(run.seed)
    model, n, a = run.model, run.n, run.a
    x = run.x
    knots = np.empty((n + 1, model.dim))
    knots[0] = x
    state = x.copy()
    for k in range(1, n + 1):
        f = np.asarray(model.sampler(state, rng), dtype=np.float64)
        g = rng.standard_normal(model.dim)
        state = state + (f + a * g) / n
        if not np.all(np.isfinite(state)):
            raise SimulationBlowup(k)
        knots[k] = state
    return Trajectory(knots)


def simulate_batch(model: KernelModel, x, n: int, a, replicas: int, rng: Generator) -> np.ndarray:
    """Replica-vectorized simulation, shape (replicas, n + 1, d).

    Requires kernel.supports_batch(model); per step it draws the model
    noise for all replicas and then the smoothing Gaussians, mirroring the
    single-run draw discipline.
    """
    if not kernel.supports_batch(model):
        raise ValueError("model does not support batched simulation; simulate per replica instead")
    amp = perturbation_amplitude(a)
    x = kernel._as_vector(x, model.dim, "x")
    d = model.dim
    s_t = model.sigma_matrix.T
    knots = np.empty((replicas, n + 1, d))
    state = np.broadcast_to(x, (replicas, d)).copy()
    knots[:, 0] = state
    for k in range(1, n + 1):
        z = model.base.sample(rng, (replicas, d))
        g = rng.standard_normal((replicas, d))
        f = model.drift(state) + z @ s_t
        state = state + (f + amp * g) / n
        if not np.all(np.isfinite(state)):
            raise SimulationBlowup(k)
        knots[:, k] = state
    return knots


def phi_n(model: KernelModel, x, a, traj: Trajectory, lam: DualMeasure) -> float:
    """Discrete dual functional of the scheme at resolution traj.n.

    <x, lam([0,1])> + sum_i cgf_a(knots[i-1], beta_i / n) with beta_i the
    tent-basis integrals of lam.
    """
    amp = perturbation_amplitude(a)
    x = kernel._as_vector(x, model.dim, "x")
    if lam.dim != model.dim:
        raise ValueError(f"measure dim {lam.dim} does not match model dim {model.dim}")
    n = traj.n
    alphas = lam.basis_integrals(n) / n
    ys = traj.knots[:-1]
    total = float(x @ lam.total_mass())
    total += float(np.sum(kernel.cgf_rows(model, ys, alphas)))
    if amp > 0.0:
        total += 0.5 * amp * amp * float(np.sum(alphas * alphas))
    return total


def phi_limit(model: KernelModel, x, a, f: Trajectory, lam: DualMeasure) -> float:
    """Continuum dual functional <x, lam([0,1])> + int cgf_a(f(s), lam([s,1])) ds.

    The tail lam([s, 1]) is piecewise constant between atoms, so the
    integral is assembled piecewise with order-5 Gauss-Legendre quadrature
    between consecutive breakpoints (knots of f plus atom times).
    """
    amp = perturbation_amplitude(a)
    x = kernel._as_vector(x, model.dim, "x")
    if lam.dim != model.dim:
        raise ValueError(f"measure dim {lam.dim} does not match model dim {model.dim}")
    breaks = np.unique(np.concatenate([f.times, lam.times, [0.0, 1.0]]))
    nodes, weights = gauss_legendre_01(5)

    ss, als, ws = [], [], []
    for u, v in zip(breaks[:-1], breaks[1:]):
        if v <= u:
            continue
        tail = lam.weights[lam.times > u].sum(axis=0) if len(lam.times) else np.zeros(lam.dim)
        for q, w in zip(nodes, weights):
            ss.append(u + q * (v - u))
            als.append(tail)
            ws.append(w * (v - u))
    ss = np.asarray(ss)
    als = np.asarray(als)
    ws = np.asarray(ws)
    ys = eval_path_many(f, ss)
    vals = kernel.cgf_rows(model, ys, als)
    if amp > 0.0:
        vals = vals + 0.5 * amp * amp * np.sum(als * als, axis=1)
    return float(x @ lam.total_mass()) + float(ws @ vals)


def coupled_perturbation_gaps(
    model, x, n: int, a, seed: int, realizations: int = 1
) -> tuple[np.ndarray, np.ndarray]:
    """Pathwise gap between smoothed and unsmoothed runs, with its certificate.

    Both runs share the model draws Z_k and the smoothing draws g_k; the
    certificate

        bound = (a / n) * sum_j |g_j| * exp( (1/n) * sum_i H_i ),
        H_i = |F_i(y_i) - F_i(y'_i)| / |y_i - y'_i|   (0 when states agree),

    dominates the realized sup-norm gap realization by realization.  Returns
    arrays of shape (realizations,).
    """
    from .kernel import AffineNoiseModel

    if not isinstance(model, AffineNoiseModel):
        raise TypeError("pathwise coupling needs the affine structure to reuse draws")
    amp = perturbation_amplitude(a)
    x = kernel._as_vector(x, model.dim, "x")
    d = model.dim
    rng = default_rng(seed)
    b = realizations
    state_plain = np.broadcast_to(x, (b, d)).copy()
    state_smooth = state_plain.copy()
    gaps = np.zeros(b)
    ratio_sum = np.zeros(b)
    g_norm_sum = np.zeros(b)
    constant_sigma = model.sigma_matrix is not None
    for k in range(1, n + 1):
        z = model.base.sample(rng, (b, d))
        g = rng.standard_normal((b, d))
        if constant_sigma and model.drift_broadcasts:
            f_plain = model.drift(state_plain) + z @ model.sigma_matrix.T
            f_smooth = model.drift(state_smooth) + z @ model.sigma_matrix.T
        else:
            f_plain = np.stack([model.drift(y) + model.sigma_fn(y) @ zz for y, zz in zip(state_plain, z)])
            f_smooth = np.stack([model.drift(y) + model.sigma_fn(y) @ zz for y, zz in zip(state_smooth, z)])
        diff_state = np.linalg.norm(state_smooth - state_plain, axis=1)
        diff_f = np.linalg.norm(f_smooth - f_plain, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            h = np.where(diff_state > 0.0, diff_f / diff_state, 0.0)
        ratio_sum += h
        g_norm_sum += np.linalg.norm(g, axis=1)
        state_plain = state_plain + f_plain / n
        state_smooth = state_smooth + (f_smooth + amp * g) / n
        if not (np.all(np.isfinite(state_plain)) and np.all(np.isfinite(state_smooth))):
            raise SimulationBlowup(k)
        gaps = np.maximum(gaps, np.linalg.norm(state_smooth - state_plain, axis=1))
    bounds = (amp / n) * g_norm_sum * np.exp(ratio_sum / n)
    return gaps, bounds


def coupled_perturbation_gap(model, x, n: int, a, seed: int) -> tuple[float, float]:
    """Single-realization version of coupled_perturbation_gaps."""
    gaps, bounds = coupled_perturbation_gaps(model, x, n, a, seed, realizations=1)
    return float(gaps[0]), float(bounds[0])


# ---------------------------------------------------------------------------
# trajectory serialization: CSV with header t,x1,...,xd

def save_trajectory(traj: Trajectory, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + [f"x{i + 1}" for i in range(traj.dim)])
        for t, row in zip(traj.times, traj.knots):
            writer.writerow([repr(float(t))] + [repr(float(v)) for v in row])


def load_trajectory(path) -> Trajectory:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "t" or len(header) < 2:
            raise ValueError(f"{path}: expected header t,x1,...,xd, got {header}")
        rows = [[float(v) for v in row] for row in reader if row]
    if len(rows) < 2:
        raise ValueError(f"{path}: need at least two knot rows")
    data = np.asarray(rows, dtype=np.float64)
    times, knots = data[:, 0], data[:, 1:]
    n = len(times) - 1
    if np.max(np.abs(times - np.arange(n + 1) / n)) > 1e-9:
        raise ValueError(f"{path}: knot times must form the uniform lattice k/n")
    return Trajectory(knots)
