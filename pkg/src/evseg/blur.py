"""Spatially varying sharpness from blockwise DCT high-frequency content.

Each pixel is scored by the fraction of absolute DCT energy that sits in
high-frequency coefficients (index sum above half the block size) of the
block around it. Maps from several scales are combined by per-pixel max.
The ratio is already in [0, 1]; an optional min-max stretch is available
for display but is off by default so scores stay comparable across images
(blurring an image must never raise its mean score).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft
import scipy.ndimage
from numpy.lib.stride_tricks import sliding_window_view
from skimage.filters import threshold_otsu

# Cap on the scratch buffer for batched sliding-window DCTs, bytes.
_CHUNK_BUDGET = 64 * 2**20


@dataclass(frozen=True)
class BlurMap:
    """Per-pixel sharpness in [0, 1] plus the (downsample, block) scales used."""

    sharpness: np.ndarray
    scales: tuple[tuple[int, int], ...]


def _hf_ratio_map(image: np.ndarray, block: int) -> np.ndarray:
    """Sliding-block high-frequency DCT energy ratio, one value per pixel."""
    height, width = image.shape
    pad_lo = block // 2
    pad_hi = block - 1 - pad_lo
    padded = np.pad(image, ((pad_lo, pad_hi), (pad_lo, pad_hi)), mode="reflect")
    windows = sliding_window_view(padded, (block, block))

    ii, jj = np.meshgrid(np.arange(block), np.arange(block), indexing="ij")
    hf = (ii + jj) > block // 2

    out = np.empty((height, width), dtype=np.float64)
    rows_per_chunk = max(1, _CHUNK_BUDGET // (width * block * block * 8))
    for r0 in range(0, height, rows_per_chunk):
        r1 = min(r0 + rows_per_chunk, height)
        coeffs = scipy.fft.dctn(
            windows[r0:r1].astype(np.float64), axes=(-2, -1), norm="ortho"
        )
        mags = np.abs(coeffs)
        total = mags.sum(axis=(-2, -1))
        high = mags[..., hf].sum(axis=-1)
        out[r0:r1] = np.divide(
            high, total, out=np.zeros_like(high), where=total > 1e-12
        )
    return out


def _halve(image: np.ndarray) -> np.ndarray:
    h2, w2 = image.shape[0] // 2, image.shape[1] // 2
    return image[: 2 * h2, : 2 * w2].reshape(h2, 2, w2, 2).mean(axis=(1, 3))


def dct_sharpness_map(
    image: np.ndarray,
    num_scales: int = 2,
    block: int = 16,
    downsample: bool = False,
    normalize: bool = False,
) -> BlurMap:
    """Multi-scale sharpness map of a grayscale image.

    With downsample=False (default) scale s analyses the full-resolution
    image with block size block * 2^s; with downsample=True the block stays
    fixed and the image is halved per scale. Scales the image cannot fit
    are skipped. A constant image scores exactly 0 everywhere.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError("image must be 2-D grayscale")
    if num_scales < 1:
        raise ValueError("need at least one scale")
    if block < 4 or block % 2:
        raise ValueError("block must be an even size >= 4")
    if min(image.shape) < block:
        raise ValueError("image smaller than one block")

    height, width = image.shape
    combined = np.zeros((height, width), dtype=np.float64)
    used: list[tuple[int, int]] = []
    for s in range(num_scales):
        if downsample:
            factor = 2**s
            work = image
            for _ in range(s):
                work = _halve(work)
            blk = block
        else:
            factor = 1
            work = image
            blk = block * 2**s
        if min(work.shape) < blk:
            break
        ratio = _hf_ratio_map(work, blk)
        if factor > 1:
            ratio = np.repeat(np.repeat(ratio, factor, axis=0), factor, axis=1)
            ratio = np.pad(
                ratio,
                ((0, max(0, height - ratio.shape[0])), (0, max(0, width - ratio.shape[1]))),
                mode="edge",
            )[:height, :width]
        np.maximum(combined, ratio, out=combined)
        used.append((factor, blk))

    if normalize:
        lo, hi = combined.min(), combined.max()
        if hi - lo > 1e-12:
            combined = (combined - lo) / (hi - lo)
    return BlurMap(sharpness=np.clip(combined, 0.0, 1.0), scales=tuple(used))


def disc_structure(radius: int) -> np.ndarray:
    """Disc structuring element: offsets with dy^2 + dx^2 <= radius^2."""
    if radius < 0:
        raise ValueError("radius must be non-negative")
    span = np.arange(-radius, radius + 1)
    dy, dx = np.meshgrid(span, span, indexing="ij")
    return (dy * dy + dx * dx) <= radius * radius


def sharp_region_mask(blur_map: BlurMap, dilation_radius: int = 2) -> np.ndarray:
    """Binary sharp region: Otsu threshold over the nonzero sharpness values,
    then dilation by a disc.

    An all-zero map yields an empty mask; a uniform nonzero map marks every
    nonzero pixel sharp.
    """
    sharp = blur_map.sharpness
    nonzero = sharp[sharp > 0]
    if nonzero.size == 0:
        return np.zeros(sharp.shape, dtype=bool)
    if np.ptp(nonzero) <= 1e-12:
        mask = sharp > 0
    else:
        mask = sharp > threshold_otsu(nonzero)
    if dilation_radius > 0 and mask.any():
        mask = scipy.ndimage.binary_dilation(mask, structure=disc_structure(dilation_radius))
    return mask
