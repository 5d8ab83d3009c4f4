"""Exception hierarchy.

The CLI maps these onto exit codes: :class:`ConfigError` is a usage error (1),
:class:`DataError` and subclasses are data/format errors (2) and
:class:`DivergenceError` means training blew up (3).
"""


class AscError(Exception):
    pass


class ConfigError(AscError, ValueError):
    """Bad argument or configuration value."""


class DataError(AscError):
    """Input data cannot be read or violates a file contract."""


class FormatError(DataError, ValueError):
    pass


class UnsupportedFormatError(FormatError):
    pass


class TruncationError(FormatError):
    pass


class ParseError(FormatError):
    pass


class TaxonomyError(DataError, ValueError):
    pass


class DuplicateEntryError(DataError, ValueError):
    pass


class CompatibilityError(DataError):
    """Artifact was produced by a different feature pipeline."""


class UnsupportedArchitectureError(FormatError):
    pass


class ShapeError(AscError, ValueError):
    pass


class DivergenceError(AscError, ArithmeticError):
    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch
