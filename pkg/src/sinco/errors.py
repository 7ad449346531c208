"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError (and subclasses) -> 2,
FormatError / DataError -> 3, anything else -> 1.
"""


class SincoError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(SincoError):
    """Operand shapes violate an operation's contract."""


class ContractError(SincoError):
    """A precondition other than a shape constraint was violated."""


class ConfigError(SincoError):
    """Invalid configuration or flag combination."""


class BudgetError(ConfigError):
    """No model fits the requested bit budget."""


class FormatError(SincoError):
    """Malformed file: bad magic, unknown version, truncation, ..."""


class DataError(SincoError):
    """Input data violates an invariant (range, pairing, dimensions)."""


class QuantizationError(SincoError):
    """A weight cannot be represented in the target precision."""
