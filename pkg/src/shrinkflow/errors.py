"""Exception types raised by shrinkflow."""


class ShrinkflowError(Exception):
    """Base class for all package errors."""


class InvalidInputError(ShrinkflowError, ValueError):
    pass


class DimensionError(ShrinkflowError, ValueError):
    """Grid or coefficient arrays do not match the expected shape."""


class UnsupportedGeometryError(ShrinkflowError, ValueError):
    pass


class DegenerateGraphError(ShrinkflowError, ArithmeticError):
    """The radial graph collapses (r <= 0) somewhere on the grid."""


class InsufficientSpectrumError(ShrinkflowError):
    """The requested quantity needs eigenvalues beyond the resolved cutoff."""


class CutoffError(ShrinkflowError, ValueError):
    pass


class SpectralRangeError(ShrinkflowError, OverflowError):
    def __init__(self, message, mode=None):
        super().__init__(message)
        self.mode = mode


class OutOfContractError(ShrinkflowError, ValueError):
    pass


class StiffnessError(ShrinkflowError):
    """A time step was rejected too many times in a row."""


class UndefinedOrderError(ShrinkflowError):
    pass


class ZeroSolutionError(ShrinkflowError, ValueError):
    pass


class WindowError(ShrinkflowError, ValueError):
    """An audit window does not fit inside the trajectory span."""
