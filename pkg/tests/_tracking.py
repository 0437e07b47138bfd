"""Shared mask-tracking fixture for refinement tests."""

from __future__ import annotations

import numpy as np

from evseg import PatchFeatureGrid

OBJ_ROWS = 4  # patch units
OBJ_COLS = 4
GRID_H, GRID_W = 12, 24
OBJ_PATCH = 8


def tracking_scene(n_frames=20, start_col=1, row=4):
    """An object block sliding one patch per frame over smooth background codes.

    Background features vary smoothly with position so a vacated patch finds
    background, not the object, among its nearest matches; the object itself
    lives in a reserved orthogonal dimension.
    """
    i, j = np.mgrid[0:GRID_H, 0:GRID_W]
    theta = 0.15 * i + 0.08 * j
    bg = np.stack(
        [np.cos(theta), np.sin(theta), np.cos(2 * theta), np.sin(2 * theta), 0 * theta],
        axis=-1,
    ).astype(np.float32)
    obj_code = np.array([0, 0, 0, 0, 1], dtype=np.float32)

    feats = []
    gt = np.zeros((n_frames, GRID_H * OBJ_PATCH, GRID_W * OBJ_PATCH), dtype=bool)
    for f in range(n_frames):
        c = start_col + f
        grid = bg.copy()
        grid[row : row + OBJ_ROWS, c : c + OBJ_COLS] = obj_code
        feats.append(PatchFeatureGrid(grid=grid, patch_size=OBJ_PATCH, source="external"))
        gt[
            f,
            row * OBJ_PATCH : (row + OBJ_ROWS) * OBJ_PATCH,
            c * OBJ_PATCH : (c + OBJ_COLS) * OBJ_PATCH,
        ] = True
    return feats, gt


def mask_iou(a, b):
    union = (a | b).sum()
    return 1.0 if union == 0 else (a & b).sum() / union
