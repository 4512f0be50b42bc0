"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: InputError -> 1, NumericError -> 2,
FormatError -> 3.
"""


class BonsaiError(Exception):
    """Base class for all toolkit errors."""


class InputError(BonsaiError, ValueError):
    """Caller passed something invalid (bad ids, ranges, shapes, flags)."""


class ConfigError(InputError):
    """A run configuration violates its invariants."""


class StructuralError(InputError):
    """A slice or keep-set would produce a structurally invalid model."""


class NumericError(BonsaiError, ArithmeticError):
    """Non-finite values appeared where finite ones are required."""

    def __init__(self, message: str, layer: int | None = None):
        super().__init__(message)
        self.layer = layer


class FormatError(BonsaiError, ValueError):
    """An on-disk artifact (checkpoint, corpus, report) is malformed."""
