"""Exception types raised across the package.

Most subclass a builtin (``ValueError``, ``OSError``) as well, so callers
that only care about the broad category can keep catching those.
"""


class FiberTensorError(Exception):
    """Base class for all package-specific errors."""


class BoundsError(FiberTensorError, IndexError):
    """Crop or index bounds outside the volume."""

    def __init__(self, axis, message):
        self.axis = axis
        super().__init__(f"axis {axis}: {message}")


class MhdFormatError(FiberTensorError, ValueError):
    """A MetaImage header could not be interpreted."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class UnsupportedElementTypeError(MhdFormatError):
    pass


class SizeMismatchError(FiberTensorError, ValueError):
    """Payload length disagrees with the declared dimensions."""

    def __init__(self, path, expected, found):
        self.path = path
        self.expected = expected
        self.found = found
        super().__init__(f"{path}: expected {expected}, found {found} bytes")


class DegenerateHistogramError(FiberTensorError, ValueError):
    """Fewer than two occupied histogram bins; no threshold exists."""


class DegenerateTensorError(FiberTensorError, ValueError):
    """Orientation tensor with vanishing largest eigenvalue."""


class NumericalError(FiberTensorError, ArithmeticError):
    """Non-finite value produced by a filter."""

    def __init__(self, message, voxel=None):
        self.voxel = voxel
        if voxel is not None:
            message = f"{message} at voxel {tuple(int(v) for v in voxel)}"
        super().__init__(message)


class PackingError(FiberTensorError, ValueError):
    """Phantom fibers cannot be placed without overlap."""


class GenerationError(FiberTensorError, ValueError):
    """Phantom parameters that cannot produce the requested layout."""
