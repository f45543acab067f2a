"""Exception hierarchy shared across the package.

The CLI maps :class:`ConfigError` to exit code 2 and every other
:class:`ProfilingError` to exit code 3.
"""


class ProfilingError(Exception):
    """Base class for all errors raised by streamprof."""


class ConfigError(ProfilingError, ValueError):
    """Invalid configuration or input schema."""


class InfeasibleConfiguration(ConfigError):
    """The initial parallel limits cannot satisfy the sum/uniqueness constraint."""


class SchemaError(ConfigError):
    """A trace or points file violates its schema."""


class FitError(ProfilingError):
    """Curve fitting produced a non-finite residual.

    ``last_params`` holds the last finite iterate.
    """

    def __init__(self, message, last_params=None):
        super().__init__(message)
        self.last_params = last_params


class GridExhausted(ProfilingError):
    """No unprofiled CPU limit remains for a selection strategy."""


class NumericalFailure(ProfilingError):
    """Kernel matrix stayed singular after jitter retries."""


class OracleError(ProfilingError):
    """The job oracle could not deliver samples."""


class TraceExhausted(OracleError):
    pass


class CommandTimeout(OracleError):
    pass


class CommandOutputError(OracleError):
    pass
