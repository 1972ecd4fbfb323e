"""Exception hierarchy shared by all thermofuse modules."""

from __future__ import annotations


class ThermofuseError(Exception):
    """Base class for all toolkit errors."""


class SingularTransform(ThermofuseError):
    """Affine transform is not invertible (|det| below tolerance)."""


class DegenerateConfiguration(ThermofuseError):
    """Least-squares fit is rank-deficient (e.g. collinear keypoints)."""


class BandCountMismatch(ThermofuseError):
    """Raster does not have the band count an operation requires."""


class EmptyCrop(ThermofuseError):
    """Requested crop would produce a zero-sized raster."""


class DimensionMismatch(ThermofuseError):
    """Input raster dimensions deviate from the declared sensor dimensions."""


class DegenerateCovariance(ThermofuseError):
    """All pixels identical; band covariance is zero."""


class MalformedLine(ThermofuseError):
    """A detection or match file line could not be parsed."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class UnknownClassIndex(MalformedLine):
    """Class index outside the taxonomy."""


class CoordinateOutOfRange(MalformedLine):
    """Normalized coordinate outside [0, 1]."""


class MixedImageIds(ThermofuseError):
    """Tiles from different images passed to a single-image merge."""


class CanvasMismatch(ThermofuseError):
    """Two annotation sets do not share the same canvas dimensions."""


class EmptyTrainingSet(ThermofuseError):
    """No samples supplied to the tree trainer."""


class UntrainedTree(ThermofuseError):
    """Prediction requested from a tree with no nodes."""


class InfeasiblePlacement(ThermofuseError):
    """Synthetic box placement failed after bounded retries."""


class ConfigError(ThermofuseError):
    """Invalid or unknown configuration key/value."""
