"""Convex conjugates of increment cumulant functions.

The central object is the pointwise conjugate

    conj(y, z) = sup_alpha [ <z, alpha> - cgf(y, alpha) ]

which prices the local cost of moving with velocity z from state y.  The sup
is computed by damped Newton ascent on the concave objective, with an exact
classification of the three possible outcomes: converged (finite value and
an interior maximizer), divergent (the objective increases without bound, so
the conjugate is +inf), and max-iterations (neither certificate reached).

Smoothing the cumulant with a Gaussian term (amplitude a > 0) makes the
conjugate finite everywhere with the explicit quadratic ceiling
(|z| + D)^2 / (2 a^2), D any bound on the increment mean norm; see
perturbed_conjugate_bound.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .errors import SingularSigmaError, TiltUnreachableError
from . import kernel
from .kernel import AffineNoiseModel, KernelModel, perturbation_amplitude

CONVERGED = "converged"
DIVERGENT = "divergent"
MAX_ITERATIONS = "max-iterations"


@dataclass(frozen=True)
class ConjugateSettings:
    """Newton ascent controls.

    Convergence is declared at gradient norm <= grad_tol_scale * (1 + |z|).
    Iterates are capped at norm_cap; hitting the cap while the objective has
    been strictly increasing over the trailing window classifies the problem
    as divergent, otherwise the solve ends as max-iterations.
    """

    grad_tol_scale: float = 1e-10
    max_iter: int = 200
    norm_cap: float = 1e3
    max_step: float = 100.0
    window: int = 20
    hess_fd_step: float = 1e-6
    bracket_cap: float = 1e3


DEFAULT_SETTINGS = ConjugateSettings()


@dataclass
class ConjugateResult:
    value: float
    argmax: Optional[np.ndarray]
    status: str
    iterations: int
    grad_norm: float


@dataclass
class DominatingPointResult:
    """Boundary point and tilt for a half-space target.

    point is the tilted mean on the boundary, multiplier the tilt vector
    along the outward normal, and level the conjugate cost at point.
    """

    point: np.ndarray
    multiplier: np.ndarray
    level: float
    t: float


def _hessian(model: KernelModel, y, alpha, step):
    if model.cgf_hess is not None:
        return np.asarray(model.cgf_hess(y, alpha), dtype=np.float64)
    d = len(alpha)
    h = np.empty((d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = step
        h[:, j] = (model.cgf_grad(y, alpha + e) - model.cgf_grad(y, alpha - e)) / (2.0 * step)
    return 0.5 * (h + h.T)


def _solve_ascent(hess, grad):
    """Newton direction for maximizing; falls back to gradient ascent."""
    d = len(grad)
    ridge = 0.0
    scale = max(np.trace(hess) / d, 1e-8)
    for _ in range(6):
        try:
            p = np.linalg.solve(hess + ridge * np.eye(d), grad)
        except np.linalg.LinAlgError:
            p = None
        if p is not None and np.all(np.isfinite(p)) and float(p @ grad) > 0.0:
            return p
        ridge = scale * 1e-8 if ridge == 0.0 else ridge * 100.0
    return grad.copy()


def _maximize(model, y, z, a, settings, x0):
    """Damped Newton ascent for h(alpha) = <z, alpha> - cgf(y, alpha) - a^2|alpha|^2/2."""
    d = model.dim
    aa = a * a
    z = np.asarray(z, dtype=np.float64)
    tol = settings.grad_tol_scale * (1.0 + float(np.linalg.norm(z)))

    def objective(alpha):
        return float(z @ alpha) - model.cgf(y, alpha) - 0.5 * aa * float(alpha @ alpha)

    alpha = np.zeros(d) if x0 is None else np.array(x0, dtype=np.float64)
    h = objective(alpha)
    if not np.isfinite(h):
        alpha = np.zeros(d)
        h = 0.0
    best_val, best_arg = (0.0, np.zeros(d))
    if h > best_val:
        best_val, best_arg = h, alpha.copy()
    history = deque(maxlen=settings.window + 1)
    history.append(h)

    for it in range(1, settings.max_iter + 1):
        grad = z - np.asarray(model.cgf_grad(y, alpha), dtype=np.float64) - aa * alpha
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= tol:
            return ConjugateResult(h, alpha, CONVERGED, it, gnorm)
        hess = _hessian(model, y, alpha, settings.hess_fd_step)
        if aa > 0.0:
            hess = hess + aa * np.eye(d)
        p = _solve_ascent(hess, grad)
        with np.errstate(over="ignore"):
            pnorm = float(np.linalg.norm(p))
        if not np.isfinite(pnorm):
            # Newton direction overflowed (flat Hessian); take the longest
            # admissible gradient step instead
            p = grad * (settings.max_step / gnorm)
        elif pnorm > settings.max_step:
            p = p * (settings.max_step / pnorm)
        # backtracking line search on the concave objective
        slope = float(grad @ p)
        step = 1.0
        accepted = False
        for _ in range(40):
            cand = alpha + step * p
            if np.array_equal(cand, alpha):
                break
            h_cand = objective(cand)
            if np.isfinite(h_cand) and h_cand >= h + 1e-4 * step * slope:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        alpha, h = cand, h_cand
        history.append(h)
        if h > best_val:
            best_val, best_arg = h, alpha.copy()
        if a == 0.0 and float(np.linalg.norm(alpha)) > settings.norm_cap:
            increments = np.diff(np.asarray(history))
            if len(increments) > 0 and np.all(increments > 0.0):
                return ConjugateResult(np.inf, None, DIVERGENT, it, gnorm)
            return ConjugateResult(best_val, best_arg, MAX_ITERATIONS, it, gnorm)

    grad = z - np.asarray(model.cgf_grad(y, alpha), dtype=np.float64) - aa * alpha
    return ConjugateResult(best_val, best_arg, MAX_ITERATIONS, settings.max_iter, float(np.linalg.norm(grad)))


def fenchel(model: KernelModel, y, z, settings: ConjugateSettings = None, x0=None) -> ConjugateResult:
    """Conjugate of cgf(y, .) at z by Newton ascent.

    Returns value >= 0 always (alpha = 0 is feasible with objective 0);
    converged results satisfy |z - cgf_grad(y, argmax)| <= tolerance.
    """
    settings = settings or DEFAULT_SETTINGS
    y = kernel._as_vector(y, model.dim, "y")
    z = kernel._as_vector(z, model.dim, "z")
    return _maximize(model, y, z, 0.0, settings, x0)


def perturbed_fenchel(model: KernelModel, a, y, z, settings: ConjugateSettings = None, x0=None) -> ConjugateResult:
    """Conjugate of the Gaussian-smoothed cumulant; finite for every z when a > 0."""
    amp = perturbation_amplitude(a)
    if amp == 0.0:
        return fenchel(model, y, z, settings=settings, x0=x0)
    settings = settings or DEFAULT_SETTINGS
    y = kernel._as_vector(y, model.dim, "y")
    z = kernel._as_vector(z, model.dim, "z")
    return _maximize(model, y, z, amp, settings, x0)


def perturbed_conjugate_bound(a, z, mean_norm_bound: float) -> float:
    """Quadratic ceiling (|z| + D)^2 / (2 a^2) for the smoothed conjugate."""
    amp = perturbation_amplitude(a)
    if amp <= 0.0:
        raise ValueError("the quadratic ceiling requires a > 0")
    r = float(np.linalg.norm(z)) + float(mean_norm_bound)
    return r * r / (2.0 * amp * amp)


def mean_norm_bound(model: KernelModel, states, headroom: float = 1.1) -> float:
    """Bound on |increment mean| over the supplied states, with headroom."""
    worst = 0.0
    for y in np.atleast_2d(np.asarray(states, dtype=np.float64)):
        worst = max(worst, float(np.linalg.norm(kernel.cgf_grad(model, y, np.zeros(model.dim)))))
    return headroom * worst


def fenchel_closed_form_affine(model: AffineNoiseModel, y, z) -> float:
    """Closed-form conjugate for affine models with invertible sigma(y).

    Equals base_conjugate(sigma(y)^{-1} (z - drift(y))); raises
    SingularSigmaError when sigma(y) cannot be inverted, in which case the
    numeric fenchel solver is the way to go.
    """
    if not isinstance(model, AffineNoiseModel):
        raise TypeError("closed form requires an affine model")
    if model.base.conjugate is None:
        raise ValueError(f"base law {model.base.kind!r} has no closed-form conjugate")
    y = kernel._as_vector(y, model.dim, "y")
    z = kernel._as_vector(z, model.dim, "z")
    s = np.asarray(model.sigma_fn(y), dtype=np.float64)
    rhs = z - np.asarray(model.drift(y), dtype=np.float64)
    try:
        v = np.linalg.solve(s, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSigmaError(
            "sigma(y) is singular; no closed form here, use the numeric fenchel solver"
        ) from exc
    if not np.all(np.isfinite(v)):
        raise SingularSigmaError(
            "sigma(y) is numerically singular; use the numeric fenchel solver"
        )
    return float(model.base.conjugate(v))


def dominating_point_halfspace(model: KernelModel, y, xi, c, settings: ConjugateSettings = None) -> DominatingPointResult:
    """Cheapest boundary point of {<z, xi> >= c} under the local cost at y.

    Solves <cgf_grad(y, t xi), xi> = c for t >= 0 (monotone in t by
    convexity), then reports the tilted mean x0 = cgf_grad(y, t* xi), the
    tilt t* xi, and the cost level <x0, t* xi> - cgf(y, t* xi), which equals
    fenchel(model, y, x0).value.

    The normal is normalized to unit length (c rescaled accordingly), which
    leaves the half-space unchanged.  Requires the increment mean at y to
    lie strictly outside the half-space; raises TiltUnreachableError when no
    tilt below the bracket cap reaches level c.
    """
    settings = settings or DEFAULT_SETTINGS
    y = kernel._as_vector(y, model.dim, "y")
    xi = kernel._as_vector(xi, model.dim, "xi")
    norm = float(np.linalg.norm(xi))
    if norm <= 0.0:
        raise ValueError("xi must be nonzero")
    xi = xi / norm
    c = float(c) / norm

    mean = kernel.cgf_grad(model, y, np.zeros(model.dim))
    if float(mean @ xi) >= c:
        raise ValueError(
            f"half-space covers the increment mean (<mean, xi> = {float(mean @ xi):.6g} >= {c:.6g}); "
            "the target is not rare from this state"
        )

    def g(t):
        return float(kernel.cgf_grad(model, y, t * xi) @ xi) - c

    hi = 1.0
    while g(hi) < 0.0:
        hi *= 2.0
        if hi > settings.bracket_cap:
            raise TiltUnreachableError(
                f"no tilt below {settings.bracket_cap:g} reaches level {c:g}; "
                "the boundary value is unreachable by tilting"
            )
    t_star = brentq(g, 0.0, hi, xtol=1e-12, maxiter=200)
    tilt = t_star * xi
    point = kernel.cgf_grad(model, y, tilt)
    level = float(point @ tilt) - kernel.cgf(model, y, tilt)
    return DominatingPointResult(point=point, multiplier=tilt, level=level, t=float(t_star))
