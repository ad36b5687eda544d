# flight_elements/errors.py
"""Exception hierarchy shared by the flight elements and the CLI."""


class FlightSimError(Exception):
    """Base class for every error raised by this project."""


class ConfigError(FlightSimError):
    """Invalid or unreadable settings, scenario, sweep or schedule data."""


class ModelFileError(ConfigError):
    """Aerodynamic model file is malformed or has an unsupported schema."""


class DomainError(FlightSimError, ValueError):
    """An argument lies outside the supported domain of an operation."""


class EffectivenessError(FlightSimError, ArithmeticError):
    """Control effectiveness evaluation produced a non-finite column."""

    def __init__(self, message, surface_index):
        super().__init__(message)
        self.surface_index = surface_index


class DivergenceError(FlightSimError, ArithmeticError):
    """The equations of motion produced a non-finite derivative."""

    def __init__(self, message, last_state=None):
        super().__init__(message)
        self.last_state = last_state


class SingularGMatrixError(FlightSimError, ArithmeticError):
    """The outer-loop control matrix cannot be inverted."""

    def __init__(self, message, determinant):
        super().__init__(message)
        self.determinant = determinant


class AllocationError(FlightSimError):
    """Control allocation failed; ``best_iterate`` holds the last feasible point."""

    def __init__(self, message, best_iterate=None):
        super().__init__(message)
        self.best_iterate = best_iterate


class TrimError(FlightSimError):
    """Trim solver did not converge."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ExportError(FlightSimError, OSError):
    """Reading or writing a result file failed."""

    def __init__(self, message, path):
        super().__init__(f"{message} [{path}]")
        self.path = path
