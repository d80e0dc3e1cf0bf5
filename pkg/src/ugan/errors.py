"""Exception taxonomy shared across the package.

Every error raised on purpose derives from UganError so the CLI can map
failures to exit code 1 while genuine usage errors exit 2.
"""


class UganError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(UganError, ValueError):
    """Invalid values or shapes handed to an operation."""


class ContractError(UganError, RuntimeError):
    """API misuse: wrong call order, reused tape, missing tape."""


class FormatError(UganError, ValueError):
    """Malformed on-disk artifact (IDX, checkpoint, PGM, config)."""


class NumericsError(UganError, FloatingPointError):
    """A primitive produced NaN or Inf; the message names the op."""
