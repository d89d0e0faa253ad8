"""Exception hierarchy shared across the package."""


class DrdnError(Exception):
    """Base class for all library errors."""


class ShapeMismatch(DrdnError, ValueError):
    pass


class InvalidStack(DrdnError, ValueError):
    """A layer stack produces an output smaller than one pixel."""


class ConfigInvalid(DrdnError, ValueError):
    pass


class DegenerateBatch(DrdnError, ValueError):
    """Batch norm in training mode over a single value per channel."""


class EpochOutOfRange(DrdnError, IndexError):
    pass


class IndexOutOfRange(DrdnError, IndexError):
    pass


class NumericalError(DrdnError, ArithmeticError):
    """A NaN/Inf or exploding loss was detected.

    ``step`` is the optimizer step index at which it happened, if known.
    """

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class FormatError(DrdnError, ValueError):
    """Malformed file. ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


class ChecksumError(FormatError):
    pass


class ImageTooSmall(DrdnError, ValueError):
    pass


class ParseError(DrdnError, ValueError):
    """Unparseable text input; ``column`` is 1-based."""

    def __init__(self, message, column=None):
        if column is not None:
            message = f"{message} (column {column})"
        super().__init__(message)
        self.column = column
