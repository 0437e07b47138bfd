"""Temporal mask refinement by feature-guided label propagation.

A mask is carried from frame to frame by matching each destination patch
against nearby source patches and averaging their (soft) labels with
softmax-weighted similarities. Frames whose propagated prediction disagrees
with their own mask are treated as unreliable: the most self-consistent
frame in each temporal window is kept as a keyframe and its mask is chained
outward, replacing unreliable or missing masks and OR-merging with good
ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import PatchFeatureGrid
from .saliency import mask_from_partition


@dataclass(frozen=True)
class DMRConfig:
    window: int = 5  # frames per refinement window
    top_k: int = 5  # source patches blended per destination patch
    radius: int = 3  # spatial search radius, patch units
    threshold: float = 0.5  # soft-label binarization
    temperature: float = 0.07  # softmax sharpness of the similarity weights

    def __post_init__(self):
        if self.window < 1 or self.top_k < 1 or self.radius < 0:
            raise ValueError("window, top_k must be >= 1 and radius >= 0")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


@dataclass(frozen=True)
class MaskSequence:
    """Per-frame binary masks plus a validity flag per frame."""

    masks: np.ndarray  # (N, H, W) bool
    validity: np.ndarray  # (N,) bool

    def __post_init__(self):
        if self.masks.ndim != 3 or self.masks.dtype != bool:
            raise ValueError("masks must be (N, H, W) bool")
        if self.validity.shape != (self.masks.shape[0],):
            raise ValueError("validity must have one flag per frame")

    def __len__(self) -> int:
        return self.masks.shape[0]


def _patch_fractions(mask: np.ndarray, patch_size: int, h_p: int, w_p: int) -> np.ndarray:
    """Foreground fraction per patch; remainder pixels fold into edge patches."""
    height, width = mask.shape
    rows = np.minimum(np.arange(height) // patch_size, h_p - 1)
    cols = np.minimum(np.arange(width) // patch_size, w_p - 1)
    lin = (rows[:, None] * w_p + cols[None, :]).ravel()
    on = np.bincount(lin, weights=mask.ravel().astype(np.float64), minlength=h_p * w_p)
    total = np.bincount(lin, minlength=h_p * w_p)
    return (on / total).reshape(h_p, w_p)


def _unit_grid(feat: PatchFeatureGrid) -> np.ndarray:
    g = feat.grid.astype(np.float64)
    norms = np.sqrt((g * g).sum(axis=-1, keepdims=True))
    return np.divide(g, norms, out=np.zeros_like(g), where=norms > 0)


def propagate_mask(
    feat_src: PatchFeatureGrid,
    feat_dst: PatchFeatureGrid,
    mask_src: np.ndarray,
    cfg: DMRConfig = DMRConfig(),
) -> np.ndarray:
    """Predict the destination-frame mask from a source frame.

    For every destination patch, the top_k most cosine-similar source
    patches within `radius` (patch units) vote with softmax(sim/temperature)
    weights on the source patch's foreground fraction; the blended soft
    label is binarized at cfg.threshold and painted back to pixel level.
    """
    if feat_src.grid.shape != feat_dst.grid.shape:
        raise ValueError("source and destination feature grids differ in shape")
    if feat_src.patch_size != feat_dst.patch_size:
        raise ValueError("source and destination patch sizes differ")
    h_p, w_p = feat_src.shape
    p = feat_src.patch_size
    height, width = mask_src.shape
    if height // p != h_p or width // p != w_p:
        raise ValueError("mask dimensions inconsistent with the feature grid")

    fractions = _patch_fractions(mask_src.astype(bool), p, h_p, w_p)
    src = _unit_grid(feat_src)
    dst = _unit_grid(feat_dst)

    r = cfg.radius
    offsets = [(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1)]
    sims = np.full((len(offsets), h_p, w_p), -np.inf)
    votes = np.zeros((len(offsets), h_p, w_p))
    for k, (dy, dx) in enumerate(offsets):
        a0, a1 = max(0, -dy), h_p - max(0, dy)
        b0, b1 = max(0, -dx), w_p - max(0, dx)
        if a0 >= a1 or b0 >= b1:
            continue
        d = dst[a0:a1, b0:b1]
        s = src[a0 + dy : a1 + dy, b0 + dx : b1 + dx]
        sims[k, a0:a1, b0:b1] = (d * s).sum(axis=-1)
        votes[k, a0:a1, b0:b1] = fractions[a0 + dy : a1 + dy, b0 + dx : b1 + dx]

    kk = min(cfg.top_k, len(offsets))
    pick = np.argpartition(-sims, kk - 1, axis=0)[:kk]
    top_sims = np.take_along_axis(sims, pick, axis=0)
    top_votes = np.take_along_axis(votes, pick, axis=0)
    # Offset (0, 0) is always valid, so the per-patch max is finite.
    peak = top_sims.max(axis=0, keepdims=True)
    weights = np.exp((top_sims - peak) / cfg.temperature)
    soft = (weights * top_votes).sum(axis=0) / weights.sum(axis=0)
    fg = soft >= cfg.threshold
    return mask_from_partition(fg, (h_p, w_p), p, height, width)


def coherence_losses(
    masks: MaskSequence, feats: list[PatchFeatureGrid], cfg: DMRConfig = DMRConfig()
) -> tuple[np.ndarray, float]:
    """Per-frame disagreement between each mask and its propagated prediction.

    Frame t is predicted from the nearest earlier valid frame (the first
    valid frame is predicted backward from its successor). Invalid frames
    get NaN and are excluded from the mean.
    """
    n = len(masks)
    if len(feats) != n:
        raise ValueError("need one feature grid per frame")
    valid = np.nonzero(masks.validity)[0]
    if valid.size == 0:
        raise ValueError("all frames are invalid")
    losses = np.full(n, np.nan)
    if valid.size == 1:
        losses[valid[0]] = 0.0
        return losses, 0.0
    for pos, idx in enumerate(valid):
        src = valid[pos - 1] if pos > 0 else valid[1]
        predicted = propagate_mask(feats[src], feats[idx], masks.masks[src], cfg)
        losses[idx] = np.mean(predicted != masks.masks[idx])
    return losses, float(np.mean(losses[valid]))


def select_keyframe(losses: np.ndarray, loss_mean: float) -> int:
    """Frame with the lowest loss among those strictly below the mean.

    With uniform losses nothing is below the mean; fall back to the global
    argmin (lowest index on ties). NaN losses are never eligible.
    """
    losses = np.asarray(losses, dtype=np.float64)
    finite = np.isfinite(losses)
    if not finite.any():
        raise ValueError("no frame has a finite loss")
    eligible = finite & (losses < loss_mean)
    if eligible.any():
        cand = np.nonzero(eligible)[0]
        return int(cand[np.argmin(losses[cand])])
    return int(np.argmin(np.where(finite, losses, np.inf)))


def dynamic_mask_refinement(
    masks: MaskSequence, feats: list[PatchFeatureGrid], cfg: DMRConfig = DMRConfig()
) -> MaskSequence:
    """Refine a mask sequence window by window around self-consistent keyframes.

    Within each window of cfg.window frames the keyframe mask is chained
    forward and backward. A frame keeps original OR propagated when its loss
    beats the window mean, and is replaced outright when it was invalid or
    its loss is at or above the mean. Windows with no valid frame at all are
    filled by chaining from the previous refined frame.
    """
    n = len(masks)
    if len(feats) != n:
        raise ValueError("need one feature grid per frame")
    out = masks.masks.copy()

    def _chain(t_from, t_to, step: int, start_mask: np.ndarray, losses, loss_mean, base):
        # step is given by the caller: a one-frame chain is directionless by
        # its endpoints alone, and the wrong sign would read feats[t + 1] as
        # feats[t - 1] (or vice versa).
        current = start_mask
        for t in range(t_from, t_to + step, step):
            predicted = propagate_mask(feats[t - step], feats[t], current, cfg)
            local = t - base
            unreliable = (
                losses is None
                or not masks.validity[t]
                or not np.isfinite(losses[local])
                or losses[local] >= loss_mean
            )
            out[t] = predicted if unreliable else (masks.masks[t] | predicted)
            current = out[t]

    for start in range(0, n, cfg.window):
        stop = min(start + cfg.window, n)
        chunk = MaskSequence(
            masks=masks.masks[start:stop], validity=masks.validity[start:stop]
        )
        if not chunk.validity.any():
            # Nothing trustworthy here; extend the previous refined mask.
            seed = out[start - 1] if start > 0 else np.zeros_like(out[0])
            current = seed
            for t in range(start, stop):
                if t == 0:
                    out[t] = current
                else:
                    out[t] = propagate_mask(feats[t - 1], feats[t], current, cfg)
                current = out[t]
            continue
        losses, loss_mean = coherence_losses(chunk, feats[start:stop], cfg)
        keyframe = start + select_keyframe(losses, loss_mean)
        out[keyframe] = masks.masks[keyframe]
        if keyframe + 1 < stop:
            _chain(keyframe + 1, stop - 1, 1, out[keyframe], losses, loss_mean, start)
        if keyframe - 1 >= start:
            _chain(keyframe - 1, start, -1, out[keyframe], losses, loss_mean, start)
    return MaskSequence(masks=out, validity=np.ones(n, dtype=bool))
