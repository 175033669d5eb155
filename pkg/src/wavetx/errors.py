"""Exception types shared across the toolkit.

The CLI maps these onto process exit codes: configuration problems exit
with 2, malformed input files with 3, and numeric or training failures
with 4.
"""


class WavetxError(Exception):
    """Base class for all toolkit errors."""


class InvalidShapeError(WavetxError):
    """Operands have incompatible or malformed shapes."""


class InvalidArgumentError(WavetxError):
    """A parameter value is outside its documented domain."""


class StateError(WavetxError):
    """An operation needs state that is missing or already consumed."""


class FormatError(WavetxError):
    """A file or byte stream does not match its declared format."""


class ConfigError(WavetxError):
    """An experiment configuration is inconsistent or incomplete."""


class NumericError(WavetxError):
    """A computation produced non-finite values or diverged."""
