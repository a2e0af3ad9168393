"""Exception hierarchy shared by all modules.

Each error carries the process exit code the command-line front-end uses
when the error escapes a command.
"""


class DmdXtalkError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(DmdXtalkError, ValueError):
    """Invalid configuration value or file."""

    exit_code = 2


class ParameterError(DmdXtalkError, ValueError):
    """Invalid argument passed to an operation."""

    exit_code = 2


class ShapeError(ParameterError):
    """Grid shapes that must agree do not."""


class RuleViolation(DmdXtalkError):
    """A physical or hologram-layout rule was broken."""

    exit_code = 3


class NoBeamError(RuleViolation):
    """Beam-center calibration saw no power above the detector floor."""


class NoPeakError(ParameterError):
    """A field has no intensity peak (all zero)."""


class CapacityError(DmdXtalkError):
    """The FP1 region cannot host the requested secondary windows."""

    exit_code = 4


class Diagnostic(UserWarning):
    """Non-fatal numerical diagnostic (degenerate fit, clamped amplitude)."""
