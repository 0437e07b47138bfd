"""Segmentation scoring: IoU, greedy instance matching, detection rate.

Reports are emitted as JSON (nested) and CSV (sequence, metric, value rows)
so downstream tables can be assembled without re-running anything.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DetectionConfig:
    iou_threshold: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.iou_threshold <= 1.0:
            raise ValueError("iou_threshold must lie in (0, 1]")


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two binary masks.

    Two empty masks count as a perfect match by convention; that case is
    logged because it usually means a degenerate frame.
    """
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        logger.info("IoU of two empty masks; returning 1.0 by convention")
        return 1.0
    return np.count_nonzero(a & b) / union


def match_instances(
    pred_masks: list[np.ndarray], gt_masks: list[np.ndarray]
) -> list[tuple[int, int, float]]:
    """Greedy one-to-one matching by descending IoU.

    Returns (pred_index, gt_index, iou) triples; unmatched instances on
    either side simply do not appear.
    """
    if not pred_masks or not gt_masks:
        return []
    scores = np.zeros((len(pred_masks), len(gt_masks)))
    for i, pm in enumerate(pred_masks):
        for j, gm in enumerate(gt_masks):
            scores[i, j] = iou(pm, gm)
    matches = []
    free_pred = set(range(len(pred_masks)))
    free_gt = set(range(len(gt_masks)))
    while free_pred and free_gt:
        best = max(
            ((i, j) for i in free_pred for j in free_gt),
            key=lambda ij: (scores[ij], -ij[0], -ij[1]),
        )
        if scores[best] <= 0.0:
            break
        matches.append((best[0], best[1], float(scores[best])))
        free_pred.discard(best[0])
        free_gt.discard(best[1])
    return matches


def detection_rate(
    pred: list[list[np.ndarray]],
    gt: list[list[np.ndarray]],
    cfg: DetectionConfig = DetectionConfig(),
) -> float:
    """Percentage of ground-truth instances detected across all frames.

    Inputs are per-frame lists of instance masks. A ground-truth instance is
    detected when its greedily matched prediction reaches the IoU threshold.
    """
    if len(pred) != len(gt):
        raise ValueError("prediction and ground truth must cover the same frames")
    total = 0
    detected = 0
    for pred_frame, gt_frame in zip(pred, gt):
        total += len(gt_frame)
        for _, _, score in match_instances(pred_frame, gt_frame):
            if score >= cfg.iou_threshold:
                detected += 1
    if total == 0:
        logger.info("no ground-truth instances; detection rate undefined, returning 0")
        return 0.0
    return 100.0 * detected / total


def mean_matched_iou(
    pred: list[list[np.ndarray]], gt: list[list[np.ndarray]]
) -> float:
    """Average IoU of greedy matches; unmatched GT instances count as 0."""
    if len(pred) != len(gt):
        raise ValueError("prediction and ground truth must cover the same frames")
    total = 0
    score_sum = 0.0
    for pred_frame, gt_frame in zip(pred, gt):
        total += len(gt_frame)
        for _, _, score in match_instances(pred_frame, gt_frame):
            score_sum += score
    return score_sum / total if total else 0.0


def instance_masks_from_labels(label_image: np.ndarray) -> list[np.ndarray]:
    """Split a label image into one binary mask per nonzero label."""
    labels = np.unique(label_image)
    return [label_image == k for k in labels if k != 0]


def write_report_json(report: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")


def write_report_csv(rows: list[tuple[str, str, float]], path: str | Path) -> None:
    """Rows of (sequence, metric, value)."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["sequence", "metric", "value"])
        for sequence, metric, value in rows:
            writer.writerow([sequence, metric, f"{value:.6f}"])
