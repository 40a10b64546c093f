"""Ensemble Kalman inversion with perturbed observations, collapse bounds and variance inflation."""

from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .core import (
    DiagnosticsRecord,
    DimensionError,
    Ensemble,
    InflationSchedule,
    LinearForwardModel,
    ObservationSetup,
)
from .diagnostics import BoundCurve, bound_thm2, bound_thm3, c_constant, rate_slope, record, sigma_min_transfer
from .dynamics import StepConfig, eki_discrete_step, sde_inflated_step, sde_linear_step, sde_nonlinear_step, step
from .forward import assemble, build_A, forward_model, kl_initial_ensemble, kl_prior
from .montecarlo import NumericalAbort, run_arms, run_experiment

__version__ = "0.1.0"
