"""Exception hierarchy shared by every ctta module.

Each class carries an ``exit_code`` so the CLI can map failures to distinct
nonzero process statuses.
"""


class CTTAError(Exception):
    exit_code = 1


class ConfigError(CTTAError, ValueError):
    exit_code = 2


class DimensionError(CTTAError, ValueError):
    exit_code = 3


class NumericError(CTTAError, FloatingPointError):
    exit_code = 4


class InputError(CTTAError, ValueError):
    exit_code = 5


class EmptyBufferError(CTTAError, LookupError):
    exit_code = 6


class CoverageError(CTTAError, ValueError):
    exit_code = 7


class CheckpointError(CTTAError):
    exit_code = 8


class PretrainError(CTTAError):
    exit_code = 9


class EndOfStream(CTTAError):
    exit_code = 10
