"""Planar primitives shared by alignment, tiling and late fusion.

Boxes live in continuous pixel coordinates (no +1 pixel convention); affine
transforms map (x, y) -> (a*x + b*y + tx, c*x + d*y + ty).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .errors import DegenerateConfiguration, MalformedLine, SingularTransform

_SINGULARITY_TOL = 1e-12


@dataclass(frozen=True)
class Point2:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite point ({self.x}, {self.y})")


@dataclass(frozen=True)
class BBox:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        for v in (self.xmin, self.ymin, self.xmax, self.ymax):
            if not math.isfinite(v):
                raise ValueError("non-finite box coordinate")
        if self.xmin >= self.xmax or self.ymin >= self.ymax:
            raise ValueError(
                f"degenerate box ({self.xmin}, {self.ymin}, {self.xmax}, {self.ymax})"
            )

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> Point2:
        return Point2(0.5 * (self.xmin + self.xmax), 0.5 * (self.ymin + self.ymax))

    def corners(self) -> List[Point2]:
        return [
            Point2(self.xmin, self.ymin),
            Point2(self.xmax, self.ymin),
            Point2(self.xmax, self.ymax),
            Point2(self.xmin, self.ymax),
        ]

    def shift(self, dx: float, dy: float) -> "BBox":
        return BBox(self.xmin + dx, self.ymin + dy, self.xmax + dx, self.ymax + dy)


@dataclass(frozen=True)
class AffineTransform:
    """2D affine map (x, y) -> (a*x + b*y + tx, c*x + d*y + ty)."""

    a: float
    b: float
    c: float
    d: float
    tx: float
    ty: float

    @property
    def det(self) -> float:
        return self.a * self.d - self.b * self.c

    def apply(self, p: Point2) -> Point2:
        return Point2(
            self.a * p.x + self.b * p.y + self.tx,
            self.c * p.x + self.d * p.y + self.ty,
        )

    def apply_xy(self, xs: np.ndarray, ys: np.ndarray):
        """Vectorized apply on coordinate arrays."""
        return (
            self.a * xs + self.b * ys + self.tx,
            self.c * xs + self.d * ys + self.ty,
        )

    def invert(self) -> "AffineTransform":
        det = self.det
        if abs(det) <= _SINGULARITY_TOL:
            raise SingularTransform(f"determinant {det} below tolerance")
        ia = self.d / det
        ib = -self.b / det
        ic = -self.c / det
        id_ = self.a / det
        return AffineTransform(
            ia, ib, ic, id_,
            -(ia * self.tx + ib * self.ty),
            -(ic * self.tx + id_ * self.ty),
        )

    def compose(self, inner: "AffineTransform") -> "AffineTransform":
        """self o inner: apply `inner` first, then self."""
        return AffineTransform(
            self.a * inner.a + self.b * inner.c,
            self.a * inner.b + self.b * inner.d,
            self.c * inner.a + self.d * inner.c,
            self.c * inner.b + self.d * inner.d,
            self.a * inner.tx + self.b * inner.ty + self.tx,
            self.c * inner.tx + self.d * inner.ty + self.ty,
        )

    def params(self) -> List[float]:
        return [self.a, self.b, self.c, self.d, self.tx, self.ty]


IDENTITY = AffineTransform(1.0, 0.0, 0.0, 1.0, 0.0, 0.0)


@dataclass(frozen=True)
class KeypointMatch:
    """A VIS-frame point matched to a TIR-frame point."""

    src: Point2
    dst: Point2
    confidence: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union; 0 when disjoint, symmetric."""
    iw = min(a.xmax, b.xmax) - max(a.xmin, b.xmin)
    ih = min(a.ymax, b.ymax) - max(a.ymin, b.ymin)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def warp_bbox(t: AffineTransform, box: BBox) -> BBox:
    """Axis-aligned hull of the box's four transformed corners."""
    if abs(t.det) <= _SINGULARITY_TOL:
        raise SingularTransform("cannot warp box through singular transform")
    pts = [t.apply(c) for c in box.corners()]
    xs = [p.x for p in pts]
    ys = [p.y for p in pts]
    return BBox(min(xs), min(ys), max(xs), max(ys))


def estimate_affine_lsq(matches: Sequence[KeypointMatch]) -> AffineTransform:
    """Ordinary least squares on the six affine parameters.

    Solves the two 3x3 normal-equation systems (shared Gram matrix) with
    LU/partial pivoting; raises DegenerateConfiguration when the point
    configuration is rank-deficient (fewer than 3 matches, or collinear).
    """
    if len(matches) < 3:
        raise DegenerateConfiguration(f"need >= 3 matches, got {len(matches)}")
    src = np.array([[m.src.x, m.src.y, 1.0] for m in matches])
    dst = np.array([[m.dst.x, m.dst.y] for m in matches])
    gram = src.T @ src
    eigs = np.linalg.eigvalsh(gram)
    if eigs[0] <= _SINGULARITY_TOL * max(eigs[-1], 1.0):
        raise DegenerateConfiguration("collinear or coincident source points")
    rhs = src.T @ dst  # columns: (u-params, v-params)
    sol = np.linalg.solve(gram, rhs)
    return AffineTransform(
        a=float(sol[0, 0]), b=float(sol[1, 0]),
        c=float(sol[0, 1]), d=float(sol[1, 1]),
        tx=float(sol[2, 0]), ty=float(sol[2, 1]),
    )


def squared_residuals(t: AffineTransform, matches: Sequence[KeypointMatch]) -> np.ndarray:
    """Per-match squared Euclidean distance between t(src) and dst."""
    src_x = np.array([m.src.x for m in matches])
    src_y = np.array([m.src.y for m in matches])
    dst_x = np.array([m.dst.x for m in matches])
    dst_y = np.array([m.dst.y for m in matches])
    px, py = t.apply_xy(src_x, src_y)
    return (px - dst_x) ** 2 + (py - dst_y) ** 2


def parse_matches(text: str) -> List[KeypointMatch]:
    """Parse the keypoint-match format: `x_vis y_vis x_tir y_tir [confidence]`.

    Whitespace-separated, one match per line, `#` starts a comment.
    """
    matches: List[KeypointMatch] = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) not in (4, 5):
            raise MalformedLine(line_no, f"expected 4 or 5 fields, got {len(fields)}")
        try:
            values = [float(f) for f in fields]
        except ValueError:
            raise MalformedLine(line_no, f"non-numeric field in {line!r}") from None
        conf = values[4] if len(values) == 5 else 1.0
        if not 0.0 <= conf <= 1.0:
            raise MalformedLine(line_no, f"confidence {conf} outside [0, 1]")
        matches.append(
            KeypointMatch(Point2(values[0], values[1]), Point2(values[2], values[3]), conf)
        )
    return matches


def load_matches(path) -> List[KeypointMatch]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_matches(fh.read())
