"""Lazy-regime scaled SGLD: models, integrators, bounds, and experiment drivers."""

from .losses import GapDegenerateError, RiskValue, SquaredLoss, empirical_risk, risk_gradient
from .models import (CenteredPredictor, DeepNet, LinearizedPredictor,
                     ShallowTanhNet, per_sample_loss_gradients)
from .ntk import LazyRadius, gram, lazy_radius, layerwise_gram, min_eigenvalue
from .sgld import (DivergenceError, MartingaleState, SgldConfig, em_step,
                   noise_covariance, sample_noise, sgd_step, simulate,
                   simulate_coupled, simulate_sgd)
from .diagnostics import (BoundReport, ExitProbabilityReport, TrajectoryRecord,
                          build_bound_report, detect_exit, detect_exit_deep,
                          exit_cohort_decomposition, exit_probability_bound,
                          exit_probability_mc, gap_decay_bound,
                          linearization_error_bound, minimizer_distance_bound,
                          wilson_interval)
from .assumptions import (AssumptionReport, curvature_bound,
                          jacobian_lipschitz_bound, select_eta, verify_all)
from .experiments import (Dataset, RunSettings, TeacherConfig,
                          generate_teacher_student, load_settings,
                          run_alpha_sweep, run_exit_probability)

__version__ = "0.1.0"

__all__ = [
    "GapDegenerateError", "RiskValue", "SquaredLoss", "empirical_risk",
    "risk_gradient",
    "CenteredPredictor", "DeepNet", "LinearizedPredictor", "ShallowTanhNet",
    "per_sample_loss_gradients",
    "LazyRadius", "gram", "lazy_radius", "layerwise_gram", "min_eigenvalue",
    "DivergenceError", "MartingaleState", "SgldConfig", "em_step",
    "noise_covariance", "sample_noise", "sgd_step", "simulate",
    "simulate_coupled", "simulate_sgd",
    "BoundReport", "ExitProbabilityReport", "TrajectoryRecord",
    "build_bound_report", "detect_exit", "detect_exit_deep",
    "exit_cohort_decomposition", "exit_probability_bound",
    "exit_probability_mc", "gap_decay_bound", "linearization_error_bound",
    "minimizer_distance_bound", "wilson_interval",
    "AssumptionReport", "curvature_bound", "jacobian_lipschitz_bound",
    "select_eta", "verify_all",
    "Dataset", "RunSettings", "TeacherConfig", "generate_teacher_student",
    "load_settings", "run_alpha_sweep", "run_exit_probability",
    "__version__",
]
