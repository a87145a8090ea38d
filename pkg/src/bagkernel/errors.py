"""Exception types shared across the package."""


class BagKernelError(Exception):
    """Base class for every error raised by this package."""


class FormatError(BagKernelError):
    """A binary or text file does not match its documented layout."""


class ValidationError(BagKernelError, ValueError):
    """Input parses but violates a data invariant."""


class DimensionMismatchError(ValidationError):
    """Vectors or matrices disagree on a dimension."""


class MetaMismatchError(ValidationError):
    """A model is applied to a kernel built with different settings."""


class ConvergenceError(BagKernelError):
    """An iterative solver hit its iteration cap."""

    def __init__(self, message, gap=None):
        super().__init__(message)
        self.gap = gap
