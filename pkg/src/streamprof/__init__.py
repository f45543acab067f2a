"""Few-probe runtime profiling of black-box stream-processing jobs under CPU limits."""

__version__ = "0.1.0"

from .estimator import TieredRuntimeRegressor
from .exceptions import (
    ConfigError,
    FitError,
    GridExhausted,
    InfeasibleConfiguration,
    OracleError,
    ProfilingError,
)
from .grid import LimitGrid
from .metrics import count_wins, smape
from .model import ProfilePoint, RuntimeModel, evaluate, fit, invert, select_tier
from .oracle import CommandOracle, SyntheticOracle, TraceOracle, load_trace, probe
from .selection import initial_limits, make_strategy, synthetic_target
from .session import ProfilingConfig, SessionReport, run_benchmark, run_session
from .stopping import StoppingRule, ci_width, running_stats, should_stop

__all__ = [
    "CommandOracle",
    "ConfigError",
    "FitError",
    "GridExhausted",
    "InfeasibleConfiguration",
    "LimitGrid",
    "OracleError",
    "ProfilePoint",
    "ProfilingConfig",
    "ProfilingError",
    "RuntimeModel",
    "SessionReport",
    "StoppingRule",
    "SyntheticOracle",
    "TieredRuntimeRegressor",
    "TraceOracle",
    "ci_width",
    "count_wins",
    "evaluate",
    "fit",
    "initial_limits",
    "invert",
    "load_trace",
    "make_strategy",
    "probe",
    "run_benchmark",
    "run_session",
    "running_stats",
    "select_tier",
    "should_stop",
    "smape",
    "synthetic_target",
]
