"""
Exception hierarchy.

Every error raised by the library derives from SpinBathError and from the closest builtin,
so callers may catch either. The CLI maps them to exit codes (see main_cli).
"""


class SpinBathError(Exception):
    """Base class; `configuration_index` is set by the harness when a bath configuration fails."""

    configuration_index: int | None = None


class ConfigError(SpinBathError, ValueError):
    pass


class UnknownLabelError(SpinBathError, KeyError):
    pass


class LevelCrossingError(SpinBathError, ArithmeticError):
    pass


class NoClockTransitionError(SpinBathError, ValueError):
    pass


class BathGenerationError(SpinBathError, ValueError):
    pass


class HyperfineTableError(SpinBathError, ValueError):
    pass


class CoincidentSitesError(SpinBathError, ValueError):
    pass


class SequenceError(SpinBathError, ValueError):
    pass


class ClusterSizeError(SpinBathError, ValueError):
    pass


class CCEBreakdownError(SpinBathError, ArithmeticError):
    """A sub-cluster term became too small to divide by (strongly correlated bath)."""


class QuadratureError(SpinBathError, ArithmeticError):
    pass


class UnresolvedFilterError(SpinBathError, ValueError):
    pass


class SpectroscopyInputError(SpinBathError, ValueError):
    pass


class ResultFormatError(SpinBathError, ValueError):
    """A result file lacks a known schema header or the columns its schema requires."""
