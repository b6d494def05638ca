"""Exception hierarchy shared by the harpcal modules."""


class HarpError(Exception):
    """Base class for every error raised by harpcal."""


class ImageFormatError(HarpError):
    """Unsupported or malformed raster file."""


class DimensionError(HarpError, ValueError):
    """Image too small for the requested operation."""


class DegenerateError(HarpError, ValueError):
    """Chain or point set without enough geometric extent."""


class InvertibilityError(HarpError, ValueError):
    """Radial map is not strictly increasing over the working range."""


class ConvergenceError(HarpError, RuntimeError):
    """Iterative solver did not reach its tolerance."""


class NumericalError(HarpError, ArithmeticError):
    """Non-finite values met during a computation.

    ``state`` carries the last valid iterate when one exists.
    """

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class ProjectiveInfinityError(HarpError, ArithmeticError):
    """Point maps onto the line at infinity of a homography."""


class FormatError(HarpError, ValueError):
    """Malformed text interchange file (chains, models, scenes)."""
