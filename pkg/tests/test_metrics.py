"""IoU, greedy matching, detection rate, and report writers."""

from __future__ import annotations

import csv
import json

import numpy as np
import pytest

from evseg import (
    DetectionConfig,
    detection_rate,
    instance_masks_from_labels,
    iou,
    match_instances,
    mean_matched_iou,
)
from evseg.metrics import write_report_csv, write_report_json


def _square(r0, c0, size, shape=(16, 16)):
    mask = np.zeros(shape, dtype=bool)
    mask[r0 : r0 + size, c0 : c0 + size] = True
    return mask


def test_iou_identical_masks():
    a = _square(2, 2, 6)
    assert iou(a, a) == pytest.approx(1.0)


def test_iou_disjoint_masks():
    assert iou(_square(0, 0, 4), _square(8, 8, 4)) == pytest.approx(0.0)


def test_iou_half_overlap():
    a = _square(0, 0, 4)  # 16 px
    b = _square(0, 2, 4)  # overlap 8 px, union 24
    assert iou(a, b) == pytest.approx(0.3333, abs=1e-4)


def test_iou_of_two_empty_masks_is_one_by_convention(caplog):
    with caplog.at_level("INFO"):
        value = iou(np.zeros((4, 4), dtype=bool), np.zeros((4, 4), dtype=bool))
    assert value == 1.0
    assert "empty" in caplog.text


def test_iou_shape_mismatch_rejected():
    with pytest.raises(ValueError, match="shapes differ"):
        iou(np.zeros((4, 4), dtype=bool), np.zeros((4, 5), dtype=bool))


def test_iou_is_symmetric():
    rng = np.random.default_rng(0)
    for _ in range(20):
        a = rng.random((8, 8)) > 0.5
        b = rng.random((8, 8)) > 0.5
        assert iou(a, b) == iou(b, a)


def test_matching_is_one_to_one_and_greedy():
    gt = [_square(0, 0, 4), _square(8, 8, 4)]
    # one prediction overlaps both GT squares; the better pairing wins
    wide = np.zeros((16, 16), dtype=bool)
    wide[0:4, 0:4] = True
    wide[8:10, 8:10] = True
    pred = [wide, _square(8, 8, 4)]
    matches = match_instances(pred, gt)
    pairs = {(i, j) for i, j, _ in matches}
    assert pairs == {(0, 0), (1, 1)}
    assert len({i for i, _, _ in matches}) == len(matches)
    assert len({j for _, j, _ in matches}) == len(matches)


def test_matching_skips_zero_overlap():
    matches = match_instances([_square(0, 0, 4)], [_square(8, 8, 4)])
    assert matches == []
    assert match_instances([], [_square(0, 0, 4)]) == []


def test_detection_rate_perfect_and_empty():
    gt = [[_square(0, 0, 4)], [_square(8, 8, 4)]]
    assert detection_rate(gt, gt) == pytest.approx(100.0)
    assert detection_rate([[], []], gt) == pytest.approx(0.0)
    assert detection_rate([[], []], [[], []]) == pytest.approx(0.0)


def test_detection_rate_counts_threshold_passers():
    # three GT instances matched at IoU 0.6, 0.9, 0.4: two clear 0.5
    def pair(size_pred):
        gt_mask = _square(0, 0, 10, shape=(32, 32))
        pred_mask = np.zeros((32, 32), dtype=bool)
        pred_mask[0:size_pred, 0:10] = True
        return pred_mask, gt_mask

    # IoU of a k x 10 slab vs the 10 x 10 square is k/10
    frames_pred = [[pair(6)[0]], [pair(9)[0]], [pair(4)[0]]]
    frames_gt = [[pair(6)[1]], [pair(9)[1]], [pair(4)[1]]]
    rate = detection_rate(frames_pred, frames_gt, DetectionConfig(iou_threshold=0.5))
    assert rate == pytest.approx(66.67, abs=1e-2)


def test_detection_rate_monotone_in_threshold():
    rng = np.random.default_rng(1)
    frames_pred, frames_gt = [], []
    for _ in range(6):
        gt_mask = _square(rng.integers(0, 8), rng.integers(0, 8), 6)
        noise = rng.random((16, 16)) > 0.7
        frames_pred.append([gt_mask ^ noise])
        frames_gt.append([gt_mask])
    rates = [
        detection_rate(frames_pred, frames_gt, DetectionConfig(iou_threshold=th))
        for th in (0.9, 0.7, 0.5, 0.3, 0.1)
    ]
    assert all(a <= b for a, b in zip(rates, rates[1:]))


def test_frame_count_mismatch_rejected():
    with pytest.raises(ValueError, match="same frames"):
        detection_rate([[]], [[], []])
    with pytest.raises(ValueError, match="same frames"):
        mean_matched_iou([[]], [[], []])


def test_mean_matched_iou_counts_misses_as_zero():
    gt = [[_square(0, 0, 4), _square(8, 8, 4)]]
    pred = [[_square(0, 0, 4)]]  # second instance missed entirely
    assert mean_matched_iou(pred, gt) == pytest.approx(0.5)
    assert mean_matched_iou(gt, gt) == pytest.approx(1.0)
    assert mean_matched_iou([[]], [[]]) == 0.0


def test_instance_masks_from_labels():
    labels = np.array([[0, 1, 1], [2, 2, 0], [0, 0, 5]])
    masks = instance_masks_from_labels(labels)
    assert len(masks) == 3
    assert masks[0].sum() == 2  # label 1
    assert masks[1].sum() == 2  # label 2
    assert masks[2].sum() == 1  # label 5
    assert instance_masks_from_labels(np.zeros((3, 3), dtype=int)) == []


def test_detection_config_validation():
    with pytest.raises(ValueError):
        DetectionConfig(iou_threshold=0.0)
    with pytest.raises(ValueError):
        DetectionConfig(iou_threshold=1.5)


def test_report_writers_round_trip(tmp_path):
    report = {"detection_rate": 66.666667, "mean_iou": 0.75}
    write_report_json(report, tmp_path / "report.json")
    loaded = json.loads((tmp_path / "report.json").read_text())
    assert loaded == report

    rows = [("seq01", "detection_rate", 66.666667), ("seq01", "mean_iou", 0.75)]
    write_report_csv(rows, tmp_path / "report.csv")
    with open(tmp_path / "report.csv", newline="") as handle:
        parsed = list(csv.reader(handle))
    assert parsed[0] == ["sequence", "metric", "value"]
    assert parsed[1] == ["seq01", "detection_rate", "66.666667"]
    assert parsed[2] == ["seq01", "mean_iou", "0.750000"]
