"""Patch-level appearance and flow descriptors on a regular grid.

Both descriptor families live on the same floor(H/P) x floor(W/P) grid so
they can be compared patch-for-patch when building the similarity graph.
External per-patch features (from any upstream network) use the same
container; the builtin descriptor exists so the pipeline runs without one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cmax import MotionParams


@dataclass(frozen=True)
class PatchFeatureGrid:
    """(H_p, W_p, D) float32 feature vectors, one per P x P patch."""

    grid: np.ndarray
    patch_size: int
    source: str = "external"

    def __post_init__(self):
        if self.grid.ndim != 3:
            raise ValueError("feature grid must be (H_p, W_p, D)")
        if self.patch_size < 1:
            raise ValueError("patch size must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape[0], self.grid.shape[1]

    @property
    def n_patches(self) -> int:
        return self.grid.shape[0] * self.grid.shape[1]

    @property
    def flat(self) -> np.ndarray:
        return self.grid.reshape(self.n_patches, self.grid.shape[2])


@dataclass(frozen=True)
class FlowField:
    """Dense per-pixel displacement (u, v) over one frame interval."""

    uv: np.ndarray

    def __post_init__(self):
        if self.uv.ndim != 3 or self.uv.shape[2] != 2:
            raise ValueError("flow must be (H, W, 2)")


def patch_grid_shape(height: int, width: int, patch_size: int) -> tuple[int, int]:
    if patch_size < 1:
        raise ValueError("patch size must be positive")
    h_p, w_p = height // patch_size, width // patch_size
    if h_p < 1 or w_p < 1:
        raise ValueError("image smaller than one patch")
    return h_p, w_p


def _patch_reduce(values: np.ndarray, h_p: int, w_p: int, p: int) -> np.ndarray:
    """Sum values over each P x P patch; trailing remainder pixels ignored."""
    v = values[: h_p * p, : w_p * p]
    return v.reshape(h_p, p, w_p, p).sum(axis=(1, 3))


def _l2_normalize(grid: np.ndarray) -> np.ndarray:
    norms = np.sqrt((grid * grid).sum(axis=-1, keepdims=True))
    out = np.divide(grid, norms, out=np.zeros_like(grid), where=norms > 0)
    return out


def builtin_patch_descriptor(
    frame: np.ndarray, patch_size: int, bins: int = 8
) -> PatchFeatureGrid:
    """Gradient-orientation histogram plus mean channel intensities per patch.

    The orientation histogram is magnitude weighted over [0, pi) (unsigned
    gradient direction, `bins` bins); three mean channel intensities are
    appended and the concatenation is L2 normalized, so D = bins + 3.
    """
    if patch_size < 4:
        raise ValueError("patch size must be at least 4")
    if bins < 4:
        raise ValueError("need at least 4 orientation bins")
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise ValueError("frame must be (H, W, 3)")
    h_p, w_p = patch_grid_shape(frame.shape[0], frame.shape[1], patch_size)

    img = frame.astype(np.float64)
    if np.issubdtype(frame.dtype, np.integer):
        img = img / 255.0
    gray = img.mean(axis=2)
    gy, gx = np.gradient(gray)
    mag = np.hypot(gx, gy)
    ang = np.mod(np.arctan2(gy, gx), np.pi)
    idx = np.minimum((ang / np.pi * bins).astype(np.int64), bins - 1)

    feat = np.zeros((h_p, w_p, bins + 3), dtype=np.float64)
    for b in range(bins):
        feat[:, :, b] = _patch_reduce(np.where(idx == b, mag, 0.0), h_p, w_p, patch_size)
    area = patch_size * patch_size
    for c in range(3):
        feat[:, :, bins + c] = _patch_reduce(img[:, :, c], h_p, w_p, patch_size) / area
    return PatchFeatureGrid(
        grid=_l2_normalize(feat).astype(np.float32),
        patch_size=patch_size,
        source="builtin",
    )


def flow_features(flow: FlowField, patch_size: int, bins: int = 8) -> PatchFeatureGrid:
    """Per-patch flow statistics: mean u, mean v, mean magnitude, direction
    histogram (magnitude weighted, `bins` bins over [-pi, pi)), L2 normalized.

    Patches with zero flow throughout come out as all-zero vectors; the
    similarity stage treats those as similar to nothing.
    """
    if bins < 4:
        raise ValueError("need at least 4 direction bins")
    uv = flow.uv.astype(np.float64)
    h_p, w_p = patch_grid_shape(uv.shape[0], uv.shape[1], patch_size)
    u, v = uv[:, :, 0], uv[:, :, 1]
    mag = np.hypot(u, v)
    # atan2(0, 0) = 0 but carries zero weight, so it never pollutes a bin.
    ang = np.arctan2(v, u)
    idx = np.minimum(((ang + np.pi) / (2 * np.pi) * bins).astype(np.int64), bins - 1)

    area = patch_size * patch_size
    feat = np.zeros((h_p, w_p, 3 + bins), dtype=np.float64)
    feat[:, :, 0] = _patch_reduce(u, h_p, w_p, patch_size) / area
    feat[:, :, 1] = _patch_reduce(v, h_p, w_p, patch_size) / area
    feat[:, :, 2] = _patch_reduce(mag, h_p, w_p, patch_size) / area
    for b in range(bins):
        feat[:, :, 3 + b] = _patch_reduce(
            np.where(idx == b, mag, 0.0), h_p, w_p, patch_size
        )
    return PatchFeatureGrid(
        grid=_l2_normalize(feat).astype(np.float32),
        patch_size=patch_size,
        source="flow",
    )


def synth_flow_from_motion(
    motion: MotionParams, height: int, width: int, dt: float
) -> FlowField:
    """Analytic per-pixel displacement implied by a motion model over dt.

    Translation moves every pixel by v * dt; scaling and rotation displace
    relative to the image center, matching what the event warp removes.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    xs = np.arange(width, dtype=np.float64) - cx
    ys = np.arange(height, dtype=np.float64) - cy
    ux, uy = np.meshgrid(xs, ys)
    theta = motion.phi * dt
    scale = motion.hz * dt + 1.0
    rx = scale * (np.cos(theta) * ux - np.sin(theta) * uy) - ux
    ry = scale * (np.sin(theta) * ux + np.cos(theta) * uy) - uy
    uv = np.empty((height, width, 2), dtype=np.float32)
    uv[:, :, 0] = motion.vx * dt + rx
    uv[:, :, 1] = motion.vy * dt + ry
    return FlowField(uv=uv)
