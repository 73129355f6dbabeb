"""Large-deviation toolkit for stochastic Euler recursions on [0, 1].

The package simulates recursions X_k = X_{k-1} + (F_k(X_{k-1}) + a g_k)/n
driven by state-dependent increment laws, evaluates the path cost that
governs their exponential decay rates, minimizes that cost under terminal
constraints, and estimates rare-event probabilities by plain and tilted
Monte Carlo.
"""

from .errors import (
    InfeasibleProblemError,
    NumericalFailure,
    SimulationBlowup,
    SingularSigmaError,
    TiltUnreachableError,
)
from .kernel import (
    AffineNoiseModel,
    BaseNoise,
    KernelModel,
    ModelConfigError,
    PerturbationLevel,
    PRESETS,
    affine_model,
    bernoulli_base,
    cgf,
    cgf_grad,
    constant_drift,
    gaussian_base,
    linear_drift,
    logistic_drift,
    model_from_config,
    perturbation_amplitude,
    perturbed_cgf,
    preset_model,
    sample_increment,
    zero_drift,
)
from .conjugate import (
    ConjugateResult,
    ConjugateSettings,
    DominatingPointResult,
    dominating_point_halfspace,
    fenchel,
    fenchel_closed_form_affine,
    mean_norm_bound,
    perturbed_conjugate_bound,
    perturbed_fenchel,
)
from .scheme import (
    DualMeasure,
    SchemeRun,
    Trajectory,
    basis_phi,
    coupled_perturbation_gap,
    coupled_perturbation_gaps,
    dual_pairing,
    eval_path,
    eval_path_many,
    gauss_legendre_01,
    load_trajectory,
    modulus,
    phi_limit,
    phi_n,
    replica_rng,
    resample,
    save_trajectory,
    simulate,
    simulate_batch,
)
from .action import (
    ActionProblem,
    ActionValue,
    MinimizeResult,
    MinimizeSettings,
    TerminalHalfspace,
    TerminalPoint,
    action,
    limit_ode,
    minimize_action,
    straight_line,
)
from .rare_event import (
    BallEvent,
    EstimateReport,
    HalfspaceEvent,
    MartingaleCheck,
    OdeReport,
    PathDeviationEvent,
    RateReport,
    martingale_check,
    mc_probability,
    tilted_mc_probability,
    verify_ode_convergence,
    verify_rate,
)

__version__ = "0.1.0"

__all__ = [
    "AffineNoiseModel",
    "ActionProblem",
    "ActionValue",
    "BallEvent",
    "BaseNoise",
    "ConjugateResult",
    "ConjugateSettings",
    "DominatingPointResult",
    "DualMeasure",
    "EstimateReport",
    "HalfspaceEvent",
    "InfeasibleProblemError",
    "KernelModel",
    "MartingaleCheck",
    "MinimizeResult",
    "MinimizeSettings",
    "ModelConfigError",
    "NumericalFailure",
    "OdeReport",
    "PathDeviationEvent",
    "PerturbationLevel",
    "PRESETS",
    "RateReport",
    "SchemeRun",
    "SimulationBlowup",
    "SingularSigmaError",
    "TerminalHalfspace",
    "TerminalPoint",
    "TiltUnreachableError",
    "Trajectory",
    "action",
    "affine_model",
    "basis_phi",
    "bernoulli_base",
    "cgf",
    "cgf_grad",
    "constant_drift",
    "coupled_perturbation_gap",
    "coupled_perturbation_gaps",
    "dominating_point_halfspace",
    "dual_pairing",
    "eval_path",
    "eval_path_many",
    "fenchel",
    "fenchel_closed_form_affine",
    "gauss_legendre_01",
    "gaussian_base",
    "limit_ode",
    "linear_drift",
    "load_trajectory",
    "logistic_drift",
    "martingale_check",
    "mc_probability",
    "mean_norm_bound",
    "minimize_action",
    "model_from_config",
    "modulus",
    "perturbation_amplitude",
    "perturbed_cgf",
    "perturbed_conjugate_bound",
    "perturbed_fenchel",
    "phi_limit",
    "phi_n",
    "preset_model",
    "replica_rng",
    "resample",
    "sample_increment",
    "save_trajectory",
    "simulate",
    "simulate_batch",
    "straight_line",
    "tilted_mc_probability",
    "verify_ode_convergence",
    "verify_rate",
    "zero_drift",
]
