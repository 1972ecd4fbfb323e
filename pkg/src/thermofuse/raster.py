"""Multi-band raster container, color conversion, cropping and resampling.

All internal math is 64-bit float. Band layout is (bands, height, width).
Color conversion is full-range BT.601 (JPEG convention); the chroma channels
are computed in difference form so achromatic pixels land on Cb = Cr = 128
exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import BandCountMismatch, EmptyCrop

# BT.601 luma weights; chroma scale factors follow from them.
_KR = 0.299
_KB = 0.114
_CB_SCALE = 0.5 / (1.0 - _KB)  # 0.568... -> Cb = 128 + scale*(B - Y)
_CR_SCALE = 0.5 / (1.0 - _KR)  # Cr = 128 + scale*(R - Y)


@dataclass
class Raster:
    """Image samples as float64, shape (bands, height, width)."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[np.newaxis, :, :]
        if arr.ndim != 3:
            raise ValueError(f"expected 2D or 3D array, got shape {arr.shape}")
        if arr.shape[1] < 1 or arr.shape[2] < 1 or arr.shape[0] < 1:
            raise ValueError(f"empty raster shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("raster contains non-finite samples")
        self.data = arr

    @property
    def bands(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def band(self, i: int) -> np.ndarray:
        return self.data[i]


@dataclass
class YCbCrImage:
    """Full-range YCbCr planes, each clamped to [0, 255]."""

    y: np.ndarray
    cb: np.ndarray
    cr: np.ndarray

    def __post_init__(self):
        if not (self.y.shape == self.cb.shape == self.cr.shape):
            raise ValueError("YCbCr planes must share dimensions")


def rgb_to_ycbcr(img: Raster) -> YCbCrImage:
    """Decompose a 3-band [0,255] raster into full-range BT.601 YCbCr.

    Y = 0.299R + 0.587G + 0.114B (evaluated as G + 0.299(R-G) + 0.114(B-G)
    so R=G=B maps to Y=v bit-exactly); Cb/Cr in difference form, then all
    three planes clamped to [0, 255].
    """
    if img.bands != 3:
        raise BandCountMismatch(f"rgb_to_ycbcr needs 3 bands, got {img.bands}")
    r, g, b = img.data[0], img.data[1], img.data[2]
    y = g + _KR * (r - g) + _KB * (b - g)
    cb = 128.0 + _CB_SCALE * (b - y)
    cr = 128.0 + _CR_SCALE * (r - y)
    return YCbCrImage(
        y=np.clip(y, 0.0, 255.0),
        cb=np.clip(cb, 0.0, 255.0),
        cr=np.clip(cr, 0.0, 255.0),
    )


def ycbcr_to_rgb(img: YCbCrImage) -> Raster:
    """Exact algebraic inverse of rgb_to_ycbcr, clamped to [0, 255]."""
    y, cb, cr = img.y, img.cb, img.cr
    r_minus_y = (cr - 128.0) / _CR_SCALE
    b_minus_y = (cb - 128.0) / _CB_SCALE
    r = y + r_minus_y
    b = y + b_minus_y
    g = y - (_KR * r_minus_y + _KB * b_minus_y) / (1.0 - _KR - _KB)
    rgb = np.stack([r, g, b])
    return Raster(np.clip(rgb, 0.0, 255.0))


def crop_dims(width: int, height: int, fraction: float) -> tuple[int, int]:
    """Output dims of a center crop: floor(fraction * dim) per axis."""
    return int(math.floor(fraction * width)), int(math.floor(fraction * height))


def center_crop(img: Raster, fraction: float) -> Raster:
    """Centered window of floor(fraction*w) x floor(fraction*h) samples."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction {fraction} outside (0, 1]")
    cw, ch = crop_dims(img.width, img.height, fraction)
    if cw < 1 or ch < 1:
        raise EmptyCrop(f"fraction {fraction} of {img.width}x{img.height} is empty")
    x0 = (img.width - cw) // 2
    y0 = (img.height - ch) // 2
    return Raster(img.data[:, y0 : y0 + ch, x0 : x0 + cw].copy())


def bilinear_sample(band: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample one band at continuous positions; pixel centers at i + 0.5.

    Positions outside the source clamp to the edge row/column.
    """
    h, w = band.shape
    fx = xs - 0.5
    fy = ys - 0.5
    x0 = np.floor(fx).astype(np.int64)
    y0 = np.floor(fy).astype(np.int64)
    wx = fx - x0
    wy = fy - y0
    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    top = band[y0c, x0c] * (1.0 - wx) + band[y0c, x1c] * wx
    bot = band[y1c, x0c] * (1.0 - wx) + band[y1c, x1c] * wx
    return top * (1.0 - wy) + bot * wy


def resample_bilinear(img: Raster, out_w: int, out_h: int) -> Raster:
    """Bilinear resample; constant images stay constant at any scale."""
    if out_w < 1 or out_h < 1:
        raise ValueError(f"output dims {out_w}x{out_h} must be positive")
    sx = img.width / out_w
    sy = img.height / out_h
    xs = (np.arange(out_w) + 0.5) * sx
    ys = (np.arange(out_h) + 0.5) * sy
    grid_x, grid_y = np.meshgrid(xs, ys)
    out = np.empty((img.bands, out_h, out_w))
    for i in range(img.bands):
        out[i] = bilinear_sample(img.data[i], grid_x, grid_y)
    return Raster(out)


def normalize_minmax(band: Raster) -> Raster:
    """Affine map of [min, max] onto [0, 255]; constant bands map to zero."""
    if band.bands != 1:
        raise BandCountMismatch(f"normalize_minmax needs 1 band, got {band.bands}")
    lo = float(band.data.min())
    hi = float(band.data.max())
    if hi == lo:
        return Raster(np.zeros_like(band.data))
    return Raster((band.data - lo) * (255.0 / (hi - lo)))


def read_image(path) -> Raster:
    """Load PNG (RGB 8-bit, grayscale 8/16-bit) or single-band TIFF."""
    with Image.open(path) as im:
        mode = im.mode
        if mode == "RGB":
            arr = np.asarray(im, dtype=np.float64)
            return Raster(np.moveaxis(arr, -1, 0))
        if mode in ("L", "I;16", "I", "F"):
            return Raster(np.asarray(im, dtype=np.float64))
        if mode == "RGBA":
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
            return Raster(np.moveaxis(arr, -1, 0))
    raise ValueError(f"unsupported image mode {mode!r} in {path}")


def write_image(img: Raster, path) -> None:
    """Write PNG (rounded uint8) or TIFF (float32, single band) by extension."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".png":
        arr = np.clip(np.rint(img.data), 0, 255).astype(np.uint8)
        if img.bands == 3:
            Image.fromarray(np.moveaxis(arr, 0, -1), mode="RGB").save(path)
        elif img.bands == 1:
            Image.fromarray(arr[0], mode="L").save(path)
        else:
            raise BandCountMismatch(f"PNG supports 1 or 3 bands, got {img.bands}")
    elif suffix in (".tif", ".tiff"):
        if img.bands != 1:
            raise BandCountMismatch(f"TIFF output is single-band, got {img.bands}")
        Image.fromarray(img.data[0].astype(np.float32), mode="F").save(path)
    else:
        raise ValueError(f"unsupported output extension {suffix!r}")
