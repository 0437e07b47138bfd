"""Contrast maximization: warp events by a candidate motion, accumulate an
image of warped events (IWE), score it by variance, grid-search the motion.

Bilinear splat weights are quantized to multiples of 2^-16 (sub-pixel
positions snapped to 1/65536 px). All weights are then exact dyadic
rationals, so mass bookkeeping (image total + dropped) equals the event
count bit-exactly in count mode, independent of summation order, and the
numpy and numba accumulation paths agree to the bit.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numba
import numpy as np

logger = logging.getLogger(__name__)

SUBPIXEL_STEPS = 65536.0

MIN_EVENTS_DEFAULT = 30


@dataclass(frozen=True)
class MotionParams:
    """Camera/object motion: translation (px/s), scaling (1/s), rotation (rad/s)."""

    vx: float = 0.0
    vy: float = 0.0
    hz: float = 0.0
    phi: float = 0.0

    @property
    def is_translation(self) -> bool:
        return self.hz == 0.0 and self.phi == 0.0

    @property
    def speed(self) -> float:
        return float(np.hypot(self.vx, self.vy))

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.vx, self.vy, self.hz, self.phi)


@dataclass(frozen=True)
class IWE:
    """Image of warped events plus the mass that fell off the sensor."""

    accumulation: np.ndarray
    count: int
    dropped_mass: float
    mode: str


def warp_events(
    window, motion: MotionParams, t_ref_us: float | None = None
) -> np.ndarray:
    """Warp event positions to the reference time under a motion model.

    Each event moves by its own time offset dt_i = (t_i - t_ref) seconds:
    translation subtracts dt_i * v; scaling and rotation act about the image
    center with scale hz * dt_i + 1 and angle phi * dt_i. Zero motion is an
    exact identity. Returns (N, 2) float64 columns (x, y).
    """
    if t_ref_us is None:
        t_ref_us = window.midpoint_us
    ev = window.events
    x = ev["x"].astype(np.float64)
    y = ev["y"].astype(np.float64)
    dt = (ev["t"].astype(np.float64) - float(t_ref_us)) * 1e-6
    if motion.is_translation:
        xw = x - dt * motion.vx
        yw = y - dt * motion.vy
    else:
        cx = (window.width - 1) / 2.0
        cy = (window.height - 1) / 2.0
        ux = x - cx
        uy = y - cy
        theta = motion.phi * dt
        scale = motion.hz * dt + 1.0
        rx = scale * (np.cos(theta) * ux - np.sin(theta) * uy)
        ry = scale * (np.sin(theta) * ux + np.cos(theta) * uy)
        xw = x - dt * motion.vx - (rx - ux)
        yw = y - dt * motion.vy - (ry - uy)
    return np.stack([xw, yw], axis=1)


def _quantized_corners(coords: np.ndarray):
    """Split warped coords into corner indices and exact dyadic weights."""
    x = coords[:, 0]
    y = coords[:, 1]
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = np.rint((x - x0) * SUBPIXEL_STEPS) / SUBPIXEL_STEPS
    fy = np.rint((y - y0) * SUBPIXEL_STEPS) / SUBPIXEL_STEPS
    ix = x0.astype(np.int64)
    iy = y0.astype(np.int64)
    cols = np.stack([ix, ix + 1, ix, ix + 1])
    rows = np.stack([iy, iy, iy + 1, iy + 1])
    weights = np.stack(
        [(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy]
    )
    return rows, cols, weights


def accumulate_iwe(
    coords: np.ndarray,
    polarities: np.ndarray | None,
    height: int,
    width: int,
    mode: str = "count",
) -> IWE:
    """Bilinear splat of warped events into an H x W accumulation image.

    mode "count" splats unit mass per event, "polarity" splats signed +-1.
    Corner weights falling outside the sensor are summed into dropped_mass;
    `count` is the number of events that deposited any in-bounds mass.
    """
    if mode not in ("count", "polarity"):
        raise ValueError(f"unknown IWE mode {mode!r}")
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise ValueError("coords must be (N, 2)")
    n = coords.shape[0]
    if mode == "polarity":
        if polarities is None:
            raise ValueError("polarity mode requires polarities")
        b = np.asarray(polarities, dtype=np.float64)
    else:
        b = np.ones(n, dtype=np.float64)

    acc = np.zeros((height, width), dtype=np.float64)
    if n == 0:
        return IWE(accumulation=acc, count=0, dropped_mass=0.0, mode=mode)

    rows, cols, weights = _quantized_corners(coords)
    signed = weights * b
    inside = (rows >= 0) & (rows < height) & (cols >= 0) & (cols < width)
    np.add.at(acc, (rows[inside], cols[inside]), signed[inside])
    dropped = float(signed[~inside].sum())
    landed = (np.abs(signed) * inside).sum(axis=0) > 0
    return IWE(
        accumulation=acc,
        count=int(np.count_nonzero(landed)),
        dropped_mass=dropped,
        mode=mode,
    )


def contrast_variance(iwe: IWE) -> float:
    """Population variance of the accumulation over all H x W pixels."""
    return float(np.var(iwe.accumulation))


@numba.njit(cache=True)
def _variance_grid_kernel(x, y, dt, b, vxs, vys, hzs, phis, cx, cy, height, width):
    n = x.shape[0]
    npix = height * width
    buf = np.zeros(npix, dtype=np.float64)
    touched = np.empty(4 * n, dtype=np.int64)
    out = np.empty(vxs.shape[0] * vys.shape[0] * hzs.shape[0] * phis.shape[0])
    ci = 0
    for a in range(vxs.shape[0]):
        for bb in range(vys.shape[0]):
            for cc in range(hzs.shape[0]):
                for dd in range(phis.shape[0]):
                    vx = vxs[a]
                    vy = vys[bb]
                    hz = hzs[cc]
                    phi = phis[dd]
                    pure = hz == 0.0 and phi == 0.0
                    nt = 0
                    for i in range(n):
                        if pure:
                            xw = x[i] - dt[i] * vx
                            yw = y[i] - dt[i] * vy
                        else:
                            ux = x[i] - cx
                            uy = y[i] - cy
                            th = phi * dt[i]
                            sc = hz * dt[i] + 1.0
                            cth = np.cos(th)
                            sth = np.sin(th)
                            xw = x[i] - dt[i] * vx - (sc * (cth * ux - sth * uy) - ux)
                            yw = y[i] - dt[i] * vy - (sc * (sth * ux + cth * uy) - uy)
                        x0 = np.floor(xw)
                        y0 = np.floor(yw)
                        fx = np.rint((xw - x0) * SUBPIXEL_STEPS) / SUBPIXEL_STEPS
                        fy = np.rint((yw - y0) * SUBPIXEL_STEPS) / SUBPIXEL_STEPS
                        ix = np.int64(x0)
                        iy = np.int64(y0)
                        w00 = (1.0 - fx) * (1.0 - fy)
                        w10 = fx * (1.0 - fy)
                        w01 = (1.0 - fx) * fy
                        w11 = fx * fy
                        if w00 != 0.0 and 0 <= ix < width and 0 <= iy < height:
                            k = iy * width + ix
                            if buf[k] == 0.0:
                                touched[nt] = k
                                nt += 1
                            buf[k] += b[i] * w00
                        if w10 != 0.0 and 0 <= ix + 1 < width and 0 <= iy < height:
                            k = iy * width + ix + 1
                            if buf[k] == 0.0:
                                touched[nt] = k
                                nt += 1
                            buf[k] += b[i] * w10
                        if w01 != 0.0 and 0 <= ix < width and 0 <= iy + 1 < height:
                            k = (iy + 1) * width + ix
                            if buf[k] == 0.0:
                                touched[nt] = k
                                nt += 1
                            buf[k] += b[i] * w01
                        if w11 != 0.0 and 0 <= ix + 1 < width and 0 <= iy + 1 < height:
                            k = (iy + 1) * width + ix + 1
                            if buf[k] == 0.0:
                                touched[nt] = k
                                nt += 1
                            buf[k] += b[i] * w11
                    s1 = 0.0
                    s2 = 0.0
                    for j in range(nt):
                        val = buf[touched[j]]
                        s1 += val
                        s2 += val * val
                        buf[touched[j]] = 0.0
                    m = s1 / npix
                    out[ci] = s2 / npix - m * m
                    ci += 1
    return out


@dataclass(frozen=True)
class AxisGrid:
    """Inclusive search range for one motion axis with a fixed step count."""

    lo: float
    hi: float
    steps: int

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.hi < self.lo:
            raise ValueError("hi must be >= lo")
        if self.steps == 1 and self.hi != self.lo:
            raise ValueError("single-step axis must have lo == hi")

    def values(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.steps)

    @property
    def spacing(self) -> float:
        if self.steps == 1:
            return 0.0
        return (self.hi - self.lo) / (self.steps - 1)

    @property
    def enabled(self) -> bool:
        return self.steps > 1


PINNED = AxisGrid(0.0, 0.0, 1)


@dataclass(frozen=True)
class MotionSearchSpace:
    """Cartesian grid over motion axes; disabled axes stay pinned to zero."""

    vx: AxisGrid
    vy: AxisGrid
    hz: AxisGrid = PINNED
    phi: AxisGrid = PINNED
    t_ref_us: float | None = None

    @classmethod
    def translation(cls, v_max: float, step: float) -> "MotionSearchSpace":
        """Symmetric +-v_max translation-only grid with the given spacing."""
        if v_max <= 0 or step <= 0:
            raise ValueError("v_max and step must be positive")
        steps = int(round(2 * v_max / step)) + 1
        axis = AxisGrid(-v_max, v_max, steps)
        return cls(vx=axis, vy=axis)

    def axes(self) -> tuple[AxisGrid, AxisGrid, AxisGrid, AxisGrid]:
        return (self.vx, self.vy, self.hz, self.phi)


@dataclass(frozen=True)
class GridSearchResult:
    params: MotionParams
    variance: float
    grid: np.ndarray  # coarse variance grid, shape (n_vx, n_vy, n_hz, n_phi)
    t_ref_us: float
    low_event_count: bool = False
    refined: bool = False


def _evaluate_grid(window, space: MotionSearchSpace, t_ref_us: float, mode: str):
    ev = window.events
    x = ev["x"].astype(np.float64)
    y = ev["y"].astype(np.float64)
    dt = (ev["t"].astype(np.float64) - float(t_ref_us)) * 1e-6
    if mode == "polarity":
        b = ev["p"].astype(np.float64)
    else:
        b = np.ones(ev.shape[0], dtype=np.float64)
    values = [axis.values() for axis in space.axes()]
    flat = _variance_grid_kernel(
        x,
        y,
        dt,
        b,
        values[0],
        values[1],
        values[2],
        values[3],
        (window.width - 1) / 2.0,
        (window.height - 1) / 2.0,
        window.height,
        window.width,
    )
    shape = tuple(v.shape[0] for v in values)
    return flat.reshape(shape), values


def _pick_winner(grid: np.ndarray, values: list[np.ndarray]):
    """Argmax with deterministic ties: smaller |v|, then lexicographic."""
    best = grid.max()
    ties = np.argwhere(grid == best)
    if ties.shape[0] > 1:
        vx = values[0][ties[:, 0]]
        vy = values[1][ties[:, 1]]
        hz = values[2][ties[:, 2]]
        phi = values[3][ties[:, 3]]
        norm = vx * vx + vy * vy
        order = np.lexsort((phi, hz, vy, vx, norm))
        ties = ties[order]
    idx = ties[0]
    params = MotionParams(
        vx=float(values[0][idx[0]]),
        vy=float(values[1][idx[1]]),
        hz=float(values[2][idx[2]]),
        phi=float(values[3][idx[3]]),
    )
    return params, float(best)


def _refined_axis(axis: AxisGrid, center: float) -> AxisGrid:
    if not axis.enabled:
        return axis
    step = axis.spacing
    return AxisGrid(center - step, center + step, 21)


def grid_search_motion(
    window,
    space: MotionSearchSpace,
    mode: str = "count",
    min_events: int = MIN_EVENTS_DEFAULT,
    refine: bool = False,
) -> GridSearchResult:
    """Exhaustive variance maximization over the motion grid.

    With refine=True a second pass re-grids each enabled axis at one tenth
    of its spacing around the coarse winner; the reported grid is always the
    coarse one.
    """
    if len(window) == 0:
        raise ValueError("cannot search motion for an empty window")
    low = len(window) < min_events
    if low:
        logger.warning(
            "motion search over %d events (fewer than %d); estimate unreliable",
            len(window),
            min_events,
        )
    t_ref = space.t_ref_us if space.t_ref_us is not None else window.midpoint_us
    grid, values = _evaluate_grid(window, space, t_ref, mode)
    params, variance = _pick_winner(grid, values)
    refined = False
    if refine:
        fine = MotionSearchSpace(
            vx=_refined_axis(space.vx, params.vx),
            vy=_refined_axis(space.vy, params.vy),
            hz=_refined_axis(space.hz, params.hz),
            phi=_refined_axis(space.phi, params.phi),
            t_ref_us=t_ref,
        )
        fine_grid, fine_values = _evaluate_grid(window, fine, t_ref, mode)
        params, variance = _pick_winner(fine_grid, fine_values)
        refined = True
    return GridSearchResult(
        params=params,
        variance=variance,
        grid=grid,
        t_ref_us=float(t_ref),
        low_event_count=low,
        refined=refined,
    )
