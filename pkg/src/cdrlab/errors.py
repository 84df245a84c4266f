"""Exception types shared across the package."""


class CdrLabError(Exception):
    """Base class for all cdrlab errors."""


class ConfigError(CdrLabError):
    """Invalid configuration (bad key, bad value, unstable section, bad range)."""


class EmptyStreamError(CdrLabError):
    """A bit source was asked for zero bits."""


class InsufficientDataError(CdrLabError):
    """Not enough samples/crossings/edges for the requested analysis."""


class LockError(CdrLabError):
    """The CDR loop never achieved (or lost) lock.

    Carries a ``diagnostic`` dict with the observed drift so callers can
    report why lock failed.
    """

    def __init__(self, message, diagnostic=None):
        super().__init__(message)
        self.diagnostic = diagnostic or {}


class SimulationFault(CdrLabError):
    """The simulation reached a non-physical state (e.g. VCO frequency <= 0)."""


class NumericalError(CdrLabError):
    """An iterative numerical routine failed to converge."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual
