"""VIS->TIR alignment: robust affine fit, quality gates, canvas rendering.

The gates follow the survey pipeline's screening rule: a pair is rejected
when it has 45 or fewer keypoint matches, or when the post-fit mean squared
residual over consensus inliers exceeds 68 px^2 (strictly greater rejects).
Accepted pairs are rendered onto the fixed 1792x1433 canvas: the cropped VIS
frame warped through (scale-2.8 o fitted affine), the TIR frame upsampled by
the same 2.8 factor.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence

import numpy as np

from .errors import DegenerateConfiguration, DimensionMismatch
from .geometry import (
    AffineTransform,
    KeypointMatch,
    Point2,
    estimate_affine_lsq,
    squared_residuals,
)
from .raster import Raster, bilinear_sample, center_crop
from .rng import SplitMix64, derive_seed

log = logging.getLogger("thermofuse.alignment")

CANVAS_WIDTH = 1792
CANVAS_HEIGHT = 1433
CANVAS_SCALE = 2.8  # 1792 / 640
VIS_SENSOR_DIMS = (4056, 3040)
TIR_SENSOR_DIMS = (640, 512)
VIS_CROP_FRACTION = 0.6


class RejectionReason(Enum):
    TOO_FEW_KEYPOINTS = "too_few_keypoints"
    RESIDUAL_TOO_HIGH = "residual_too_high"
    DEGENERATE_GEOMETRY = "degenerate_geometry"


@dataclass(frozen=True)
class GateConfig:
    """Alignment gate thresholds and consensus-fit parameters.

    Accept requires n_matches >= min_keypoints (i.e. strictly more than 45
    with the default) and mean_sq_residual <= max_mean_sq_residual.
    """

    min_keypoints: int = 46
    max_mean_sq_residual: float = 68.0
    robust_iterations: int = 2000
    robust_inlier_px: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if self.min_keypoints < 1 or self.max_mean_sq_residual <= 0:
            raise ValueError("gate thresholds must be positive")
        if self.robust_iterations < 1 or self.robust_inlier_px <= 0:
            raise ValueError("consensus parameters must be positive")


@dataclass(frozen=True)
class ResidualStats:
    n_matches: int
    n_inliers: int
    mean_sq_residual: float


@dataclass(frozen=True)
class AlignmentOutcome:
    accepted: bool
    reason: Optional[RejectionReason]
    transform: Optional[AffineTransform]
    stats: ResidualStats

    def to_record(self, pair_id: str) -> dict:
        """JSON-lines gate-report entry."""
        rec = {
            "pair_id": pair_id,
            "verdict": "accepted" if self.accepted else "rejected",
            "n_matches": self.stats.n_matches,
            "n_inliers": self.stats.n_inliers,
            "mean_sq_residual": self.stats.mean_sq_residual,
            "transform": self.transform.params() if self.transform else None,
        }
        if self.reason is not None:
            rec["reason"] = self.reason.value
        return rec


@dataclass
class AlignedPair:
    """Co-registered VIS/TIR rasters on the 1792x1433 canvas."""

    vis_aligned: Raster
    tir_aligned: Raster
    canvas_scale: float = CANVAS_SCALE
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        va, ta = self.vis_aligned, self.tir_aligned
        if (va.width, va.height) != (ta.width, ta.height):
            raise ValueError("aligned rasters must share canvas dimensions")


def _consensus_fit(
    matches: Sequence[KeypointMatch], cfg: GateConfig, rng: SplitMix64
) -> Optional[np.ndarray]:
    """Index array of the best consensus inlier set, or None if degenerate.

    Minimal 3-match hypotheses, all solved in one batch; the inlier set of
    the first hypothesis reaching the maximum count wins (deterministic
    given the seeded stream).
    """
    n = len(matches)
    src = np.array([[m.src.x, m.src.y, 1.0] for m in matches])
    dst = np.array([[m.dst.x, m.dst.y] for m in matches])

    iters = cfg.robust_iterations
    triples = np.empty((iters, 3), dtype=np.int64)
    for k in range(iters):
        triples[k] = rng.sample_indices(n, 3)

    mats = src[triples]  # (iters, 3, 3) rows [x y 1]
    dets = np.linalg.det(mats)
    ok = np.abs(dets) > 1e-9
    if not ok.any():
        return None
    params = np.linalg.solve(mats[ok], dst[triples[ok]])  # (m, 3, 2)
    pred = np.einsum("nk,mkj->mnj", src, params)
    d2 = ((pred - dst[np.newaxis]) ** 2).sum(axis=2)
    inlier_mask = d2 <= cfg.robust_inlier_px**2
    counts = inlier_mask.sum(axis=1)
    best = int(np.argmax(counts))
    if counts[best] < 3:
        return None
    return np.flatnonzero(inlier_mask[best])


def fit_alignment(
    matches: Sequence[KeypointMatch], cfg: GateConfig, pair_id: str = ""
) -> AlignmentOutcome:
    """Robust-consensus affine refit by LSQ on inliers, then gate verdicts.

    Residual stats are computed post-refit over the consensus inliers.
    Verdict priority: too few keypoints, degenerate geometry, residual gate.
    """
    n = len(matches)
    too_few = n < cfg.min_keypoints

    transform = None
    stats = ResidualStats(n_matches=n, n_inliers=0, mean_sq_residual=0.0)
    degenerate = False
    if n >= 3:
        rng = SplitMix64(derive_seed(cfg.seed, "consensus", pair_id))
        inlier_idx = _consensus_fit(matches, cfg, rng)
        if inlier_idx is None:
            degenerate = True
        else:
            inliers = [matches[i] for i in inlier_idx]
            try:
                transform = estimate_affine_lsq(inliers)
            except DegenerateConfiguration:
                degenerate = True
            else:
                res = squared_residuals(transform, inliers)
                stats = ResidualStats(
                    n_matches=n,
                    n_inliers=len(inliers),
                    mean_sq_residual=float(res.sum() / len(inliers)),
                )
    else:
        degenerate = True

    if too_few:
        return AlignmentOutcome(False, RejectionReason.TOO_FEW_KEYPOINTS, transform, stats)
    if degenerate:
        return AlignmentOutcome(False, RejectionReason.DEGENERATE_GEOMETRY, None, stats)
    if stats.mean_sq_residual > cfg.max_mean_sq_residual:
        return AlignmentOutcome(False, RejectionReason.RESIDUAL_TOO_HIGH, transform, stats)
    return AlignmentOutcome(True, None, transform, stats)


def _warp_to_canvas(band: np.ndarray, to_source: AffineTransform) -> np.ndarray:
    """Render one band on the canvas by inverse-mapping canvas centers."""
    xs = np.arange(CANVAS_WIDTH) + 0.5
    ys = np.arange(CANVAS_HEIGHT) + 0.5
    grid_x, grid_y = np.meshgrid(xs, ys)
    src_x, src_y = to_source.apply_xy(grid_x, grid_y)
    return bilinear_sample(band, src_x, src_y)


def align_pair(
    vis: Raster,
    tir: Raster,
    matches: Sequence[KeypointMatch],
    cfg: GateConfig,
    pair_id: str = "",
    strict_dims: bool = False,
):
    """Full alignment of one pair; returns AlignedPair or a rejected outcome.

    Matches are expected between the 0.6-center-cropped VIS frame and the
    TIR frame. On acceptance the VIS crop is warped through
    (scale-2.8 o affine) and the TIR upsampled by 2.8 onto the shared canvas.
    """
    if (vis.width, vis.height) != VIS_SENSOR_DIMS or (tir.width, tir.height) != TIR_SENSOR_DIMS:
        msg = (
            f"pair {pair_id or '<unnamed>'}: input dims "
            f"{vis.width}x{vis.height}/{tir.width}x{tir.height} deviate from "
            f"declared sensor dims {VIS_SENSOR_DIMS}/{TIR_SENSOR_DIMS}"
        )
        if strict_dims:
            raise DimensionMismatch(msg)
        log.warning(msg)

    outcome = fit_alignment(matches, cfg, pair_id)
    if not outcome.accepted:
        return outcome

    vis_crop = center_crop(vis, VIS_CROP_FRACTION)
    # canvas -> TIR frame -> (affine^-1) -> cropped VIS frame
    inv_scale = AffineTransform(1.0 / CANVAS_SCALE, 0.0, 0.0, 1.0 / CANVAS_SCALE, 0.0, 0.0)
    canvas_to_vis = outcome.transform.invert().compose(inv_scale)

    vis_bands = np.empty((vis_crop.bands, CANVAS_HEIGHT, CANVAS_WIDTH))
    for i in range(vis_crop.bands):
        vis_bands[i] = _warp_to_canvas(vis_crop.data[i], canvas_to_vis)
    tir_bands = np.empty((tir.bands, CANVAS_HEIGHT, CANVAS_WIDTH))
    for i in range(tir.bands):
        tir_bands[i] = _warp_to_canvas(tir.data[i], inv_scale)

    return AlignedPair(
        vis_aligned=Raster(vis_bands),
        tir_aligned=Raster(tir_bands),
        provenance={
            "pair_id": pair_id,
            "transform": outcome.transform.params(),
            "stats": {
                "n_matches": outcome.stats.n_matches,
                "n_inliers": outcome.stats.n_inliers,
                "mean_sq_residual": outcome.stats.mean_sq_residual,
            },
        },
    )


def derive_footprint(outcome: AlignmentOutcome, tir_dims: tuple[int, int]) -> List[Point2]:
    """TIR image corners mapped back into cropped-VIS coordinates."""
    if not outcome.accepted or outcome.transform is None:
        raise ValueError("footprint requires an accepted outcome")
    w, h = tir_dims
    inv = outcome.transform.invert()
    return [inv.apply(p) for p in (Point2(0, 0), Point2(w, 0), Point2(w, h), Point2(0, h))]
