"""Exception types shared across the package.

Each maps to a distinct command-line exit code, see ``finmom.cli``.
"""


class FinmomError(Exception):
    """Base class for all package-specific errors."""


class FileFormatError(FinmomError):
    """A moment, matrix, or transfer-map file violates its documented format."""


class DimensionError(FinmomError):
    """Matrix dimensions are incompatible with the requested operation."""

    def __init__(self, message: str, dims: tuple = ()):
        super().__init__(message)
        self.dims = dims


class SingularTransferError(FinmomError):
    """A transfer map has an exactly singular weight block and cannot be inverted."""

    def __init__(self, message: str, weights: tuple[int, ...] = ()):
        super().__init__(message)
        self.weights = weights


class ModelSyntaxError(FinmomError):
    """A model script failed to parse; ``position`` is a 0-based offset."""

    def __init__(self, message: str, position: int = 0):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class BasisMismatchError(FinmomError):
    """A moment vector does not match the basis a map or deconvolver expects."""
