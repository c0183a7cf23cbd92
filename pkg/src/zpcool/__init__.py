"""Heralded cooling of a mechanical oscillator by zero-photon detection.

Submodules
----------
pulsed
    Closed forms for pulsed anti-Stokes and Stokes interactions followed by
    photon counting.
fock
    Truncated Fock-space density-matrix oracle.
moments
    Second-moment dynamics, steady states, click maps and thresholds.
scenario
    Measurement-record scenarios and stochastic photon-counting trajectories.
cli
    Command-line front end (``zpcool``).
"""

from ._backend import BACKEND
from .errors import (
    ConfigError,
    DomainError,
    InstabilityError,
    InvalidRegimeError,
    NoRootError,
    NonConvergenceError,
    SingularSystemError,
    StepSizeError,
    TruncationError,
    ZeroProbabilityError,
    ZeroRateError,
    ZPCoolError,
)
from .moments import (
    ExtendedMomentState,
    MomentState,
    apply_click,
    conditioned_steady_state,
    drift,
    integrate,
    threshold_efficiency_continuous,
    unconditioned_steady_state,
)
from .params import Kind, SystemParams
from .pulsed import (
    laser_cooled_occupation,
    pulsed_as_n_click,
    pulsed_as_zero_click,
    pulsed_s_n_click,
    pulsed_s_zero_click,
    pulsed_threshold_efficiency,
    tms_occupation,
)
from .scenario import Scenario, load_scenario, run_scenario, sample_ensemble, sample_trajectory

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ConfigError",
    "DomainError",
    "ExtendedMomentState",
    "InstabilityError",
    "InvalidRegimeError",
    "Kind",
    "MomentState",
    "NoRootError",
    "NonConvergenceError",
    "Scenario",
    "SingularSystemError",
    "StepSizeError",
    "SystemParams",
    "TruncationError",
    "ZPCoolError",
    "ZeroProbabilityError",
    "ZeroRateError",
    "apply_click",
    "conditioned_steady_state",
    "drift",
    "integrate",
    "laser_cooled_occupation",
    "load_scenario",
    "pulsed_as_n_click",
    "pulsed_as_zero_click",
    "pulsed_s_n_click",
    "pulsed_s_zero_click",
    "pulsed_threshold_efficiency",
    "run_scenario",
    "sample_ensemble",
    "sample_trajectory",
    "threshold_efficiency_continuous",
    "tms_occupation",
    "unconditioned_steady_state",
]
