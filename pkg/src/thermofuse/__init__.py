"""thermofuse: visible-thermal wildlife-detection fusion toolkit.

Keypoint-based affine alignment with quality gating, PCA-in-YCbCr early
image fusion, CART-based late decision fusion with a false-positive class,
macro-metric evaluation, and a seeded synthetic harness.
"""

__version__ = "0.1.0"

from .geometry import AffineTransform, BBox, KeypointMatch, Point2, iou  # noqa: F401
from .detections import (  # noqa: F401
    AnnotationSet,
    Detection,
    FusedClass,
    TirClass,
    VisClass,
)
