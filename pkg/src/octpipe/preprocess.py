"""Image preprocessing: histogram equalization, area-average downsampling,
central-slice selection.

Images are uint8 arrays of shape (height, width); the pipeline order is
equalize, then downsample.  All rounding is half-up so every step is exactly
reproducible.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ScanRejected

DEFAULT_WIDTH = 192
DEFAULT_HEIGHT = 124
CENTRAL_COUNT = 11


def histogram_equalize(img: np.ndarray) -> np.ndarray:
    """Classic CDF equalization.

    out(v) = round(255 * (cdf(v) - cdf_min) / (n_pixels - cdf_min)), where
    cdf_min is the CDF at the lowest occupied gray level.  An image with a
    single gray level is returned unchanged (the formula divides by zero).
    """
    img = np.asarray(img)
    if img.dtype != np.uint8 or img.ndim != 2:
        raise ConfigError(f"histogram_equalize needs a 2D uint8 image, got {img.dtype}{img.shape}")
    hist = np.bincount(img.ravel(), minlength=256)
    cdf = hist.cumsum()
    occupied = np.flatnonzero(hist)
    cdf_min = int(cdf[occupied[0]])
    denom = img.size - cdf_min
    if denom == 0:
        return img.copy()
    lut = np.floor(255.0 * (cdf - cdf_min) / denom + 0.5)
    lut = np.clip(lut, 0, 255).astype(np.uint8)
    return lut[img]


def _box_weights(src: int, dst: int) -> np.ndarray:
    """dst x src matrix of fractional box-overlap weights, rows sum to src/dst."""
    scale = src / dst
    w = np.zeros((dst, src), dtype=np.float64)
    for t in range(dst):
        a = t * scale
        b = (t + 1) * scale
        k0 = int(np.floor(a))
        k1 = int(np.ceil(b))
        for k in range(k0, min(k1, src)):
            w[t, k] = min(b, k + 1) - max(a, k)
    return w


def downsample(img: np.ndarray, target_w: int = DEFAULT_WIDTH, target_h: int = DEFAULT_HEIGHT) -> np.ndarray:
    """Area-average resampling over fractional source boxes, round-half-up."""
    img = np.asarray(img)
    if img.dtype != np.uint8 or img.ndim != 2:
        raise ConfigError(f"downsample needs a 2D uint8 image, got {img.dtype}{img.shape}")
    src_h, src_w = img.shape
    if target_w < 1 or target_h < 1:
        raise ConfigError("downsample target dims must be positive")
    if src_w < target_w or src_h < target_h:
        raise ConfigError(
            f"downsample cannot upsample: source {src_w}x{src_h} < target {target_w}x{target_h}"
        )
    if (src_w, src_h) == (target_w, target_h):
        return img.copy()
    wy = _box_weights(src_h, target_h)
    wx = _box_weights(src_w, target_w)
    area = (src_h / target_h) * (src_w / target_w)
    vals = wy @ img.astype(np.float64) @ wx.T / area
    return np.floor(vals + 0.5).astype(np.uint8)


def central_indices(n_slices: int, count: int = CENTRAL_COUNT) -> list[int]:
    """Slice indices of the *count* central slices of an n-slice scan.

    For the default count=11 this is floor(N/2)-5 .. floor(N/2)+5.
    """
    if n_slices < count:
        raise ScanRejected(f"scan has {n_slices} slices, need at least {count}")
    start = n_slices // 2 - count // 2
    return list(range(start, start + count))


def select_central(slices: list, count: int = CENTRAL_COUNT) -> list:
    """The central *count* entries of an ordered slice list."""
    return [slices[i] for i in central_indices(len(slices), count)]


def preprocess_image(img: np.ndarray, target_w: int, target_h: int) -> np.ndarray:
    """The full per-image chain: equalize, then downsample."""
    return downsample(histogram_equalize(img), target_w, target_h)
