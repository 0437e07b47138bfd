"""Iterative per-object labeling on synthetic scenes with known motions."""

from __future__ import annotations

import numpy as np
import pytest

from _scenes import (
    best_label_accuracy,
    disc_cluster,
    event_mask,
    group_labels,
    two_object_scene,
    whole_stream_window,
)
from evseg import (
    AxisGrid,
    BCMaxConfig,
    EventWindow,
    MotionParams,
    MotionSearchSpace,
    SceneSpec,
    SegmentedEvents,
    accumulate_iwe,
    bcmax_segment,
    contrast_variance,
    estimate_ego_motion,
    generate_scene,
    make_events,
    warp_events,
)

SEARCH = MotionSearchSpace.translation(30.0, 5.0)


@pytest.fixture(scope="module")
def opposing_scene():
    data = two_object_scene(seed=42, v_a=(20.0, 0.0), v_b=(-20.0, 0.0))
    window = whole_stream_window(data.stream)
    mask = event_mask(data)
    return data, window, mask


def test_single_object_gets_one_label(caplog):
    spec = disc_cluster(
        (25.0, 5.0), seed=11, width=240, height=180, n_discs=5, duration=1.0,
        spread=30.0,
    )
    data = generate_scene(spec, seed=0)
    window = whole_stream_window(data.stream)
    seg = bcmax_segment(window, event_mask(data), MotionParams(), BCMaxConfig(search=SEARCH))
    assert seg.n_objects == 1
    assert seg.diagnostics == ()
    assert abs(seg.motions[1].vx - 25.0) <= 5.0
    assert abs(seg.motions[1].vy - 5.0) <= 5.0
    covered = (seg.labels[data.labels > 0] == 1).mean()
    assert covered >= 0.95


def test_opposing_velocities_get_two_labels(opposing_scene):
    data, window, mask = opposing_scene
    ego = estimate_ego_motion(window, mask, MotionSearchSpace.translation(10.0, 2.0))
    assert ego == MotionParams(vx=4.0, vy=2.0)
    seg = bcmax_segment(window, mask, ego, BCMaxConfig(search=SEARCH))
    assert seg.n_objects == 2
    velocities = sorted((m.vx, m.vy) for k, m in seg.motions.items() if k != 0)
    assert velocities == [(-20.0, 0.0), (20.0, 0.0)]
    assert seg.iterations <= 6
    assert best_label_accuracy(seg, group_labels(data)) >= 0.95


def test_labels_partition_and_stay_contiguous(opposing_scene):
    data, window, mask = opposing_scene
    seg = bcmax_segment(window, mask, MotionParams(vx=4.0, vy=2.0), BCMaxConfig(search=SEARCH))
    present = set(np.unique(seg.labels).tolist())
    assert present == {0, 1, 2}
    assert set(seg.motions) == {0, 1, 2}
    assert len(seg.labels) == len(window)


def test_each_label_sharpens_under_its_own_motion(opposing_scene):
    data, window, mask = opposing_scene
    seg = bcmax_segment(window, mask, MotionParams(vx=4.0, vy=2.0), BCMaxConfig(search=SEARCH))
    for k, motion in seg.motions.items():
        if k == 0:
            continue
        sub = EventWindow(
            events=window.events[seg.labels == k],
            t_start=window.t_start,
            t_end=window.t_end,
            width=window.width,
            height=window.height,
        )
        compensated = accumulate_iwe(
            warp_events(sub, motion), None, window.height, window.width
        )
        uncompensated = accumulate_iwe(
            warp_events(sub, MotionParams()), None, window.height, window.width
        )
        assert contrast_variance(compensated) > contrast_variance(uncompensated)


def test_iteration_cap_leaves_a_diagnostic(opposing_scene):
    data, window, mask = opposing_scene
    cfg = BCMaxConfig(search=SEARCH, max_iterations=1)
    seg = bcmax_segment(window, mask, MotionParams(vx=4.0, vy=2.0), cfg)
    assert seg.iterations == 1
    assert seg.n_objects == 1
    assert any("iteration cap" in d for d in seg.diagnostics)


def test_termination_fraction_ends_the_loop_quietly():
    spec = disc_cluster(
        (25.0, 5.0), seed=11, width=240, height=180, n_discs=5, duration=1.0,
        spread=30.0,
    )
    data = generate_scene(spec, seed=0)
    window = whole_stream_window(data.stream)
    mask = event_mask(data)
    seg = bcmax_segment(window, mask, MotionParams(), BCMaxConfig(search=SEARCH))
    assert seg.diagnostics == ()
    initial = int(mask[window.events["y"], window.events["x"]].sum())
    assert (seg.labels > 0).sum() > 0.9 * initial


def test_sparse_mask_yields_no_labels(opposing_scene):
    data, window, mask = opposing_scene
    ev = window.events
    obj = np.nonzero(data.labels > 0)[0]
    tiny = np.zeros_like(mask)
    tiny[ev["y"][obj[0]], ev["x"][obj[0]]] = True  # a single salient pixel
    seg = bcmax_segment(window, tiny, MotionParams(), BCMaxConfig(search=SEARCH))
    assert seg.n_objects == 0
    assert seg.iterations == 0
    assert (seg.labels == 0).all()
    assert any("<" in d for d in seg.diagnostics)


def test_ego_motion_recovered_from_the_mask_complement():
    spec = SceneSpec(
        width=240,
        height=180,
        duration=4.0,
        ego=MotionParams(vx=2.0, vy=-1.0),
        background_features=60,
    )
    data = generate_scene(spec, seed=5)
    window = whole_stream_window(data.stream)
    space = MotionSearchSpace(vx=AxisGrid(-4.0, 4.0, 9), vy=AxisGrid(-4.0, 4.0, 9))
    ego = estimate_ego_motion(window, np.zeros((180, 240), dtype=bool), space)
    assert abs(ego.vx - 2.0) <= 1.0
    assert abs(ego.vy + 1.0) <= 1.0


def test_stationary_burst_rests_at_zero_ego():
    # every event at the reference time: flat landscape, tie-break at rest
    n = 60
    ev = make_events([5000] * n, np.arange(n) % 10 + 30, np.arange(n) // 10 + 30, [1] * n)
    window = EventWindow(events=ev, t_start=0, t_end=10000, width=64, height=64)
    ego = estimate_ego_motion(
        window, np.zeros((64, 64), dtype=bool), MotionSearchSpace.translation(10.0, 5.0)
    )
    assert ego == MotionParams()


def test_all_foreground_mask_warns_and_returns_rest(opposing_scene, caplog):
    data, window, mask = opposing_scene
    with caplog.at_level("WARNING"):
        ego = estimate_ego_motion(
            window,
            np.ones_like(mask),
            MotionSearchSpace.translation(10.0, 5.0),
        )
    assert ego == MotionParams()
    assert "zero ego" in caplog.text


def test_mask_shape_is_validated(opposing_scene):
    data, window, mask = opposing_scene
    bad = np.zeros((10, 10), dtype=bool)
    with pytest.raises(ValueError, match="mask shape"):
        bcmax_segment(window, bad, MotionParams(), BCMaxConfig(search=SEARCH))
    with pytest.raises(ValueError, match="mask shape"):
        estimate_ego_motion(window, bad, SEARCH)


def test_config_validation():
    with pytest.raises(ValueError, match="fraction"):
        BCMaxConfig(search=SEARCH, termination_fraction=0.0)
    with pytest.raises(ValueError, match="fraction"):
        BCMaxConfig(search=SEARCH, termination_fraction=1.0)
    with pytest.raises(ValueError, match="iterations"):
        BCMaxConfig(search=SEARCH, max_iterations=0)


def test_segmented_events_container():
    ev = make_events([1, 2], [3, 4], [5, 6], [1, -1])
    with pytest.raises(ValueError, match="motion entry"):
        SegmentedEvents(
            events=ev,
            labels=np.array([0, 1], dtype=np.uint16),
            motions={0: MotionParams()},
            width=8,
            height=8,
        )
    seg = SegmentedEvents(
        events=ev,
        labels=np.array([0, 1], dtype=np.uint16),
        motions={0: MotionParams(), 1: MotionParams(vx=2.0)},
        width=8,
        height=8,
    )
    assert seg.n_objects == 1
    items = list(seg)
    assert (items[0].t, items[0].x, items[0].y, items[0].p, items[0].label) == (1, 3, 5, 1, 0)
    assert items[1].label == 1
    with pytest.raises(ValueError, match="one label per event"):
        SegmentedEvents(
            events=ev,
            labels=np.zeros(3, dtype=np.uint16),
            motions={0: MotionParams()},
            width=8,
            height=8,
        )
