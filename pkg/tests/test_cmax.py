"""Event warping, image accumulation, and contrast-based motion search."""

from __future__ import annotations

import numpy as np
import pytest

from evseg import (
    IWE,
    AxisGrid,
    EventWindow,
    MotionParams,
    MotionSearchSpace,
    accumulate_iwe,
    contrast_variance,
    grid_search_motion,
    make_events,
    warp_events,
)
from evseg.cmax import PINNED


def _window(t, x, y, p=None, width=64, height=64, t_start=0, t_end=None):
    t = np.asarray(t)
    if p is None:
        p = np.ones(t.shape[0], dtype=np.int64)
    if t_end is None:
        t_end = int(t.max()) + 1 if t.size else 1
    return EventWindow(
        events=make_events(t, x, y, p),
        t_start=t_start,
        t_end=int(t_end),
        width=width,
        height=height,
    )


def _moving_points(rng, bases, velocity, n, t_max_us=1_000_000):
    """Integer-pixel events from points translating rigidly at `velocity`."""
    t = np.sort(rng.integers(0, t_max_us, size=n))
    pick = rng.integers(0, len(bases), size=n)
    bx = np.array([b[0] for b in bases])[pick]
    by = np.array([b[1] for b in bases])[pick]
    x = np.rint(bx + velocity[0] * t * 1e-6).astype(np.int64)
    y = np.rint(by + velocity[1] * t * 1e-6).astype(np.int64)
    return t, x, y


# -- warping ---------------------------------------------------------------


def test_zero_motion_is_bit_exact_identity():
    rng = np.random.default_rng(0)
    n = 500
    t = np.sort(rng.integers(0, 10_000, size=n))
    x = rng.integers(0, 64, size=n)
    y = rng.integers(0, 64, size=n)
    win = _window(t, x, y)
    coords = warp_events(win, MotionParams(), t_ref_us=0.0)
    assert np.array_equal(coords[:, 0], x.astype(np.float64))
    assert np.array_equal(coords[:, 1], y.astype(np.float64))


def test_translation_warp_moves_against_the_flow():
    win = _window([1_000_000], [10], [10], t_end=1_000_001)
    coords = warp_events(win, MotionParams(vx=2.0, vy=3.0), t_ref_us=0.0)
    assert coords[0, 0] == pytest.approx(8.0, abs=1e-9)
    assert coords[0, 1] == pytest.approx(7.0, abs=1e-9)


def test_scale_warp_contracts_center_offsets():
    # 9 x 9 sensor: center (4, 4); offset (4, 2) halves to (2, 1) at hz = 0.5
    win = _window([1_000_000], [8], [6], width=9, height=9, t_end=1_000_001)
    coords = warp_events(win, MotionParams(hz=0.5), t_ref_us=0.0)
    assert coords[0, 0] == pytest.approx(6.0, abs=1e-9)
    assert coords[0, 1] == pytest.approx(5.0, abs=1e-9)


def test_events_at_reference_time_never_move():
    win = _window([5_000] * 3, [1, 10, 63], [2, 20, 63], t_end=10_000)
    params = MotionParams(vx=30.0, vy=-12.0, hz=0.8, phi=2.0)
    coords = warp_events(win, params, t_ref_us=5_000.0)
    assert np.array_equal(coords[:, 0], [1.0, 10.0, 63.0])
    assert np.array_equal(coords[:, 1], [2.0, 20.0, 63.0])


def test_default_reference_time_is_the_window_midpoint():
    win = _window([2_000], [10], [10], t_start=0, t_end=10_000)
    by_default = warp_events(win, MotionParams(vx=1.0))
    explicit = warp_events(win, MotionParams(vx=1.0), t_ref_us=5_000.0)
    assert np.array_equal(by_default, explicit)


def test_translation_warps_compose():
    rng = np.random.default_rng(1)
    t, x, y = _moving_points(rng, [(20, 20), (25, 30)], (5.0, -3.0), 2_000)
    win = _window(t, x, y)
    v1 = MotionParams(vx=5.0, vy=-3.0)
    v2 = (7.0, 11.0)
    combined = warp_events(win, MotionParams(vx=12.0, vy=8.0), t_ref_us=0.0)
    stepwise = warp_events(win, v1, t_ref_us=0.0)
    dt = (t.astype(np.float64)) * 1e-6
    stepwise = stepwise - np.stack([dt * v2[0], dt * v2[1]], axis=1)
    assert np.max(np.abs(combined - stepwise)) <= 1e-9


# -- accumulation -------------------------------------------------------------


def test_integer_coordinate_deposits_unit_mass():
    iwe = accumulate_iwe(np.array([[3.0, 2.0]]), None, 8, 8)
    assert iwe.accumulation[2, 3] == 1.0
    assert iwe.accumulation.sum() == 1.0
    assert iwe.count == 1
    assert iwe.dropped_mass == 0.0


def test_half_pixel_splits_mass_exactly():
    iwe = accumulate_iwe(np.array([[3.5, 2.0]]), None, 8, 8)
    assert iwe.accumulation[2, 3] == 0.5
    assert iwe.accumulation[2, 4] == 0.5


def test_stacked_events_add_up():
    coords = np.tile([[5.0, 5.0]], (7, 1))
    iwe = accumulate_iwe(coords, None, 8, 8)
    assert iwe.accumulation[5, 5] == 7.0
    assert iwe.count == 7  # count tracks events that landed, not pixels


def test_polarity_mode_cancels_opposite_signs():
    coords = np.array([[4.0, 4.0], [4.0, 4.0]])
    iwe = accumulate_iwe(coords, np.array([1, -1]), 8, 8, mode="polarity")
    assert iwe.accumulation[4, 4] == 0.0
    assert iwe.mode == "polarity"


def test_polarity_mode_requires_polarities():
    with pytest.raises(ValueError, match="polarit"):
        accumulate_iwe(np.array([[1.0, 1.0]]), None, 8, 8, mode="polarity")
    with pytest.raises(ValueError, match="mode"):
        accumulate_iwe(np.array([[1.0, 1.0]]), None, 8, 8, mode="events")


def test_off_sensor_mass_is_dropped_not_lost():
    iwe = accumulate_iwe(np.array([[-5.0, -5.0]]), None, 8, 8)
    assert iwe.accumulation.sum() == 0.0
    assert iwe.dropped_mass == 1.0
    assert iwe.count == 0

    straddle = accumulate_iwe(np.array([[7.5, 0.0]]), None, 8, 8)
    assert straddle.accumulation[0, 7] == 0.5
    assert straddle.dropped_mass == 0.5
    assert straddle.count == 1


def test_total_mass_is_conserved_bit_exactly():
    rng = np.random.default_rng(2)
    n = 10_000
    coords = np.stack(
        [rng.uniform(-4.0, 68.0, size=n), rng.uniform(-4.0, 68.0, size=n)], axis=1
    )
    iwe = accumulate_iwe(coords, None, 64, 64)
    assert iwe.accumulation.sum() + iwe.dropped_mass == float(n)


def test_splat_weights_are_dyadic():
    from evseg.cmax import _quantized_corners

    rng = np.random.default_rng(3)
    coords = rng.uniform(0.0, 60.0, size=(1_000, 2))
    _, _, weights = _quantized_corners(coords)
    scaled = weights * 2.0**32
    assert np.array_equal(scaled, np.rint(scaled))
    assert np.array_equal(weights.sum(axis=0), np.ones(coords.shape[0]))


def test_variance_of_a_hand_built_image():
    flat = IWE(accumulation=np.zeros((4, 4)), count=0, dropped_mass=0.0, mode="count")
    assert contrast_variance(flat) == 0.0
    peaked = IWE(
        accumulation=np.array([[4.0, 0.0], [0.0, 0.0]]),
        count=1,
        dropped_mass=0.0,
        mode="count",
    )
    assert contrast_variance(peaked) == 3.0


# -- search space -------------------------------------------------------------


def test_axis_grid_validation():
    with pytest.raises(ValueError):
        AxisGrid(0.0, 1.0, 0)
    with pytest.raises(ValueError):
        AxisGrid(1.0, 0.0, 3)
    with pytest.raises(ValueError):
        AxisGrid(0.0, 1.0, 1)
    assert not PINNED.enabled
    assert PINNED.spacing == 0.0


def test_translation_space_covers_symmetric_range():
    space = MotionSearchSpace.translation(40.0, 2.0)
    assert space.vx.steps == 41
    values = space.vx.values()
    assert values[0] == -40.0 and values[-1] == 40.0
    assert 0.0 in values
    assert space.hz is PINNED and space.phi is PINNED
    with pytest.raises(ValueError):
        MotionSearchSpace.translation(0.0, 2.0)


# -- grid search ---------------------------------------------------------------


def test_search_rejects_an_empty_window():
    win = EventWindow(
        events=make_events([], [], [], []), t_start=0, t_end=100, width=8, height=8
    )
    with pytest.raises(ValueError, match="empty"):
        grid_search_motion(win, MotionSearchSpace.translation(10.0, 5.0))


def test_search_flags_thin_windows(caplog):
    win = _window([100] * 10, [5] * 10, [5] * 10, t_end=200)
    with caplog.at_level("WARNING"):
        res = grid_search_motion(win, MotionSearchSpace.translation(10.0, 5.0))
    assert res.low_event_count
    assert "unreliable" in caplog.text
    quiet = grid_search_motion(
        win, MotionSearchSpace.translation(10.0, 5.0), min_events=5
    )
    assert not quiet.low_event_count


def test_flat_variance_ties_resolve_to_rest():
    # all events at the reference time: every candidate produces the same image
    n = 40
    win = _window([5_000] * n, np.arange(n) % 8 + 20, np.arange(n) // 8 + 20, t_end=10_000)
    res = grid_search_motion(win, MotionSearchSpace.translation(10.0, 5.0))
    assert res.params == MotionParams()
    assert res.grid.shape == (5, 5, 1, 1)
    assert np.all(res.grid == res.grid.flat[0])


def test_bar_translation_recovered_within_one_step():
    rng = np.random.default_rng(4)
    bases = [(11 + dx, 20 + dy) for dx in range(3) for dy in range(21)]
    t, x, y = _moving_points(rng, bases, (20.0, -10.0), 4_000)
    win = _window(t, x, y)
    space = MotionSearchSpace.translation(30.0, 5.0)
    res = grid_search_motion(win, space)
    assert abs(res.params.vx - 20.0) <= 5.0
    assert abs(res.params.vy + 10.0) <= 5.0
    assert res.t_ref_us == win.midpoint_us


def test_dominant_population_wins_the_search():
    rng = np.random.default_rng(5)
    a_bases = [(10 + dx, 10 + dy) for dx in range(5) for dy in range(5)]
    b_bases = [(30 + dx, 30 + dy) for dx in range(5) for dy in range(5)]
    ta, xa, ya = _moving_points(rng, a_bases, (10.0, 0.0), 1_800, t_max_us=800_000)
    tb, xb, yb = _moving_points(rng, b_bases, (-10.0, 0.0), 600, t_max_us=800_000)
    t = np.concatenate([ta, tb])
    order = np.argsort(t, kind="stable")
    x = np.concatenate([xa, xb])[order]
    y = np.concatenate([ya, yb])[order]
    win = _window(t[order], x, y, width=48, height=48)
    res = grid_search_motion(win, MotionSearchSpace.translation(10.0, 5.0))
    assert res.params.vx == 10.0
    assert res.params.vy == 0.0


def test_kernel_grid_matches_plain_numpy_evaluation():
    rng = np.random.default_rng(6)
    t, x, y = _moving_points(rng, [(20, 20), (28, 36), (40, 24)], (8.0, -6.0), 600)
    p = rng.choice([-1, 1], size=t.shape[0]).astype(np.int64)
    win = _window(t, x, y, p=p)
    space = MotionSearchSpace(
        vx=AxisGrid(-10.0, 10.0, 3),
        vy=AxisGrid(-10.0, 10.0, 3),
        hz=AxisGrid(-0.5, 0.5, 2),
        phi=AxisGrid(-1.0, 1.0, 2),
    )
    for mode in ("count", "polarity"):
        res = grid_search_motion(win, space, mode=mode)
        t_ref = res.t_ref_us
        for i, vx in enumerate(space.vx.values()):
            for j, vy in enumerate(space.vy.values()):
                for k, hz in enumerate(space.hz.values()):
                    for l, phi in enumerate(space.phi.values()):
                        params = MotionParams(vx=vx, vy=vy, hz=hz, phi=phi)
                        coords = warp_events(win, params, t_ref_us=t_ref)
                        pol = win.events["p"] if mode == "polarity" else None
                        iwe = accumulate_iwe(coords, pol, win.height, win.width, mode)
                        ref = contrast_variance(iwe)
                        got = res.grid[i, j, k, l]
                        assert got == pytest.approx(ref, rel=1e-12, abs=1e-15)


def test_refinement_tightens_an_off_grid_velocity():
    rng = np.random.default_rng(7)
    bases = [(16 + dx, 16 + dy) for dx in range(4) for dy in range(16)]
    t, x, y = _moving_points(rng, bases, (12.0, -7.0), 6_000)
    win = _window(t, x, y)
    space = MotionSearchSpace.translation(30.0, 5.0)
    coarse = grid_search_motion(win, space)
    fine = grid_search_motion(win, space, refine=True)
    assert fine.refined and not coarse.refined
    assert abs(fine.params.vx - 12.0) <= 1.0
    assert abs(fine.params.vy + 7.0) <= 1.0
    assert fine.variance >= coarse.variance
    assert fine.grid.shape == coarse.grid.shape  # reported grid stays coarse
