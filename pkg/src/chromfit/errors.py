"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: configuration problems exit 2,
numerical failures exit 3, I/O failures exit 4.
"""


class ChromfitError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(ChromfitError):
    """Invalid configuration, parameters, or input data."""


class SolverError(ChromfitError):
    """Numerical failure: CFL violation, singular step matrix, non-finite state."""


class DivergenceError(SolverError):
    """Training produced a non-finite loss."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch
