"""Exception types raised across the package."""


class PCDError(Exception):
    """Base class for all package errors."""


class InvalidField(PCDError, ValueError):
    pass


class SpecMismatch(PCDError, ValueError):
    pass


class GridMismatch(PCDError, ValueError):
    pass


class InsufficientScales(PCDError, ValueError):
    pass


class InvalidTime(PCDError, ValueError):
    pass


class ZeroMode(PCDError, ValueError):
    pass


class TruncationError(PCDError, ValueError):
    pass


class InvalidExponents(PCDError, ValueError):
    pass


class InvalidControlled(PCDError, ValueError):
    pass


class NoLocalSolution(PCDError, RuntimeError):
    """Picard iteration failed to contract down to the smallest admissible horizon."""

    def __init__(self, message, ratios=None):
        super().__init__(message)
        self.ratios = list(ratios or [])


class ConfigError(PCDError, ValueError):
    pass
