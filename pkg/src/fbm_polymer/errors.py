"""
Exception hierarchy for the fbm-polymer package.

Every error raised on purpose by the library derives from PolymerError so
the command-line runner can map failures to exit codes in one place.
"""

from typing import Optional


class PolymerError(Exception):
    """Base exception for fbm-polymer errors."""
    pass


class DomainError(PolymerError, ValueError):
    """Exception raised when a numeric argument is outside its domain."""
    pass


class FactorizationError(PolymerError):
    """Exception raised when a covariance matrix cannot be factorized."""

    def __init__(self, message: str, min_eigenvalue: Optional[float] = None):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


class GridError(PolymerError):
    """Exception raised for off-grid jump times or sites outside the box."""
    pass


class BoxTooSmallError(PolymerError):
    """Exception raised when the site box cannot hold every reachable site."""

    def __init__(self, message: str, required_radius: Optional[int] = None):
        super().__init__(message)
        self.required_radius = required_radius


class EnumerationLimitError(PolymerError):
    """Exception raised when an exhaustive enumeration exceeds its guard."""
    pass


class QuadratureError(PolymerError):
    """Exception raised when adaptive quadrature does not converge."""

    def __init__(self, message: str, error_estimate: Optional[float] = None):
        super().__init__(message)
        self.error_estimate = error_estimate


class ConfigError(PolymerError):
    """Exception raised for invalid run configuration."""
    pass


class ArtifactError(PolymerError):
    """Exception raised for unreadable or inconsistent result artifacts."""
    pass


class InvariantViolation(PolymerError):
    """Exception raised when a checked property does not hold."""

    def __init__(self, message: str, report_name: Optional[str] = None):
        super().__init__(message)
        self.report_name = report_name
