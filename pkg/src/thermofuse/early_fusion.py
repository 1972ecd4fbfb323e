"""Early image fusion: first principal component of (R, G, B, TIR) as luminance.

The fused image keeps the VIS chroma untouched: the 4-band PC1 score is
rescaled to the original Y's first two moments (or min-max stretched),
substituted for Y, and the YCbCr decomposition inverted back to RGB.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .alignment import AlignedPair
from .errors import DegenerateCovariance
from .raster import Raster, normalize_minmax, rgb_to_ycbcr, ycbcr_to_rgb, YCbCrImage

log = logging.getLogger("thermofuse.early_fusion")


@dataclass(frozen=True)
class PcaModel:
    """Band means, unit first-eigenvector loading, explained-variance ratio."""

    mean: np.ndarray  # (4,)
    loading: np.ndarray  # (4,), unit norm, TIR component >= 0
    explained_variance_ratio: float

    def to_dict(self) -> dict:
        return {
            "mean": [float(v) for v in self.mean],
            "loading": [float(v) for v in self.loading],
            "explained_variance_ratio": float(self.explained_variance_ratio),
        }


@dataclass
class FusedImage:
    image: Raster  # 3 bands on the aligned canvas
    model: PcaModel
    provenance: dict = field(default_factory=dict)


def jacobi_eigh(matrix: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100):
    """Cyclic Jacobi eigen-decomposition of a small symmetric matrix.

    Returns (eigenvalues desc, eigenvectors as columns). Stops when every
    off-diagonal magnitude is at or below tol * max|diag| (absolute tol for
    zero matrices).
    """
    a = np.array(matrix, dtype=np.float64)
    n = a.shape[0]
    v = np.eye(n)
    for _ in range(max_sweeps):
        scale = max(np.abs(np.diag(a)).max(), 1e-300)
        off = np.abs(a - np.diag(np.diag(a))).max()
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(a[p, q]) <= tol * scale:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * a[p, q])
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
                v = v @ rot
    order = np.argsort(np.diag(a))[::-1]
    return np.diag(a)[order], v[:, order]


def _band_stack(pair: AlignedPair) -> np.ndarray:
    """Flattened (4, n_pixels) stack: R, G, B and min-max-normalized TIR."""
    tir = normalize_minmax(pair.tir_aligned)
    h, w = pair.vis_aligned.height, pair.vis_aligned.width
    return np.vstack(
        [pair.vis_aligned.data.reshape(3, h * w), tir.data.reshape(1, h * w)]
    )


def _model_from_moments(mean: np.ndarray, cov: np.ndarray) -> PcaModel:
    if np.abs(cov).max() == 0.0:
        raise DegenerateCovariance("all pixels identical; zero band covariance")
    eigvals, eigvecs = jacobi_eigh(cov)
    eigvals = np.clip(eigvals, 0.0, None)
    loading = eigvecs[:, 0]
    tir_component = loading[-1]
    if tir_component < 0:
        loading = -loading
    elif tir_component == 0 and loading[np.argmax(np.abs(loading))] < 0:
        loading = -loading
    total = eigvals.sum()
    ratio = float(eigvals[0] / total) if total > 0 else 0.0
    return PcaModel(mean=mean, loading=loading, explained_variance_ratio=ratio)


def fit_pca_bands(bands: np.ndarray) -> PcaModel:
    """PCA of a (4, n) band matrix via the Jacobi solver on its covariance."""
    mean = bands.mean(axis=1)
    centered = bands - mean[:, np.newaxis]
    denom = max(bands.shape[1] - 1, 1)
    cov = (centered @ centered.T) / denom
    return _model_from_moments(mean, cov)


def fit_pca4(pair: AlignedPair) -> PcaModel:
    """Covariance PCA over the pair's per-pixel (R, G, B, TIR) vectors."""
    return fit_pca_bands(_band_stack(pair))


class PcaAccumulator:
    """Streams band sums across pairs to fit one dataset-global model."""

    def __init__(self):
        self.n = 0
        self.s1 = np.zeros(4)
        self.s2 = np.zeros((4, 4))

    def update(self, pair: AlignedPair) -> None:
        bands = _band_stack(pair)
        self.n += bands.shape[1]
        self.s1 += bands.sum(axis=1)
        self.s2 += bands @ bands.T

    def finalize(self) -> PcaModel:
        if self.n == 0:
            raise DegenerateCovariance("no pixels accumulated")
        mean = self.s1 / self.n
        cov = (self.s2 - self.n * np.outer(mean, mean)) / max(self.n - 1, 1)
        return _model_from_moments(mean, cov)


def _rescale_moments(scores: np.ndarray, target: np.ndarray) -> np.ndarray:
    t_std = float(target.std())
    s_std = float(scores.std())
    if s_std == 0.0:
        raise ZeroDivisionError
    return (scores - scores.mean()) * (t_std / s_std) + target.mean()


def _rescale_minmax(scores: np.ndarray) -> np.ndarray:
    lo, hi = float(scores.min()), float(scores.max())
    if hi == lo:
        raise ZeroDivisionError
    return (scores - lo) * (255.0 / (hi - lo))


def fuse(pair: AlignedPair, model: PcaModel | None = None, rescale: str = "moments") -> FusedImage:
    """Replace the VIS luminance with the rescaled PC1 score, invert YCbCr.

    Chroma planes pass through unchanged. A constant PC1 (zero variance)
    falls back to the original Y with a warning.
    """
    if rescale not in ("moments", "minmax"):
        raise ValueError(f"unknown rescale mode {rescale!r}")
    if model is None:
        model = fit_pca4(pair)
    bands = _band_stack(pair)
    scores = model.loading @ (bands - model.mean[:, np.newaxis])

    ycbcr = rgb_to_ycbcr(pair.vis_aligned)
    h, w = pair.vis_aligned.height, pair.vis_aligned.width
    y_flat = ycbcr.y.reshape(-1)
    try:
        if rescale == "moments":
            new_y = _rescale_moments(scores, y_flat)
        else:
            new_y = _rescale_minmax(scores)
    except ZeroDivisionError:
        log.warning(
            "constant PC1 scores for pair %s; keeping original luminance",
            pair.provenance.get("pair_id", "<unnamed>"),
        )
        new_y = y_flat
    fused_ycbcr = YCbCrImage(
        y=np.clip(new_y.reshape(h, w), 0.0, 255.0), cb=ycbcr.cb, cr=ycbcr.cr
    )
    return FusedImage(
        image=ycbcr_to_rgb(fused_ycbcr),
        model=model,
        provenance=dict(pair.provenance),
    )
