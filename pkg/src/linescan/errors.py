"""Exception types shared across the toolkit."""


class LinescanError(Exception):
    """Base class for all toolkit errors."""


class ParallelLinePlane(LinescanError):
    """Line direction is (numerically) perpendicular to the plane normal."""


class LineInPlane(ParallelLinePlane):
    """Line is parallel to and contained in the plane."""


class DegeneratePlane(LinescanError):
    """Plane four-vector has a zero normal."""


class RankDeficient(LinescanError):
    """Matrix is rank deficient where full rank is required."""


class BehindCamera(LinescanError):
    """Point lies behind the camera (non-positive camera-frame z)."""


class NoConvergence(LinescanError):
    """Iterative solver hit its iteration cap before meeting tolerances."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class DomainError(LinescanError):
    """Scalar argument outside the mathematically valid domain."""


class OutsideHemisphere(LinescanError):
    """Direction is outside the laser's emission hemisphere."""


class DegenerateConfiguration(LinescanError):
    """Point configuration too degenerate for estimation (collinear / too few)."""


class InsufficientViews(LinescanError):
    """Not enough calibration views for the requested estimate."""


class DegenerateMotion(LinescanError):
    """Calibration views do not constrain the solution (e.g. all boards parallel)."""


class CheiralityError(LinescanError):
    """No sign choice places the reconstructed target in front of the camera."""


class MissingLaserPixels(LinescanError):
    """Calibration view carries no extracted laser pixels."""


class CollinearPoints(LinescanError):
    """Plane fit needs at least three non-collinear points."""


class FrameTagMismatch(LinescanError):
    """Point clouds tagged with different coordinate frames cannot be merged."""


class NoOverlap(LinescanError):
    """Evaluation found no (frame, row) correspondence between cloud and truth."""


class ConfigError(LinescanError):
    """Invalid scan/render configuration."""
