"""Exception hierarchy shared by every module."""


class ClosedGeoError(Exception):
    """Base class for all library errors."""


class DomainError(ClosedGeoError, ValueError):
    """A point (or an integrated trajectory) left the chart domain."""

    def __init__(self, message, exit_parameter=None):
        super().__init__(message)
        self.exit_parameter = exit_parameter


class NumericError(ClosedGeoError, ArithmeticError):
    """Singular metric or similar breakdown of a numerical kernel."""


class ConnectivityError(ClosedGeoError):
    """Newton shooting did not connect two points.

    Usually means the points are at least the injectivity radius apart.
    """


class ResolutionError(ClosedGeoError):
    """Adjacent samples of a curve are too far apart for the chosen m."""


class RenormalizationError(ClosedGeoError):
    """No group element moves a point into the fundamental domain."""


class GroupOverflowError(ClosedGeoError):
    """Enumeration exceeded its element bound (group not finite within bound)."""


class ExpressionError(ClosedGeoError, ValueError):
    """Syntax error or unknown identifier in a metric/sweepout expression."""

    def __init__(self, message, position=None):
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)
        self.position = position


class ConfigError(ClosedGeoError, ValueError):
    """Invalid run configuration."""
