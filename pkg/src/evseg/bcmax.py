"""Discrete per-object motion labeling of salient events.

Ego motion is estimated once from the events outside the salient mask. The
in-mask events are then consumed iteratively: a grid search finds the
dominant motion of the still-unlabeled events, the events are warped by it,
and whoever lands inside the sharp (motion-compensated) region of the
resulting IWE receives the next object label and that motion. The loop ends
when the unlabeled set falls below a fraction of its initial population,
becomes too small to estimate from, or the iteration cap is hit; leftovers
join the off-mask events under the background label 0.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .blur import dct_sharpness_map, sharp_region_mask
from .cmax import (
    MIN_EVENTS_DEFAULT,
    MotionParams,
    MotionSearchSpace,
    accumulate_iwe,
    grid_search_motion,
    warp_events,
)
from .events import EventWindow

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BCMaxConfig:
    search: MotionSearchSpace
    termination_fraction: float = 0.10  # of the initial in-mask population
    max_iterations: int = 10
    min_events: int = MIN_EVENTS_DEFAULT
    dilation_radius: int = 2
    iwe_mode: str = "count"
    blur_block: int = 16
    blur_scales: int = 2
    blur_downsample: bool = False

    def __post_init__(self):
        if not 0.0 < self.termination_fraction < 1.0:
            raise ValueError("termination_fraction must lie in (0, 1)")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass(frozen=True)
class LabeledEvent:
    t: int
    x: int
    y: int
    p: int
    label: int


@dataclass(frozen=True)
class SegmentedEvents:
    """Events with per-event labels and per-label motions (0 = background)."""

    events: np.ndarray
    labels: np.ndarray
    motions: dict[int, MotionParams]
    width: int
    height: int
    iterations: int = 0
    diagnostics: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.labels.shape != (self.events.shape[0],):
            raise ValueError("need exactly one label per event")
        present = set(np.unique(self.labels).tolist())
        if not present <= set(self.motions):
            raise ValueError("every label must have a motion entry")

    def __len__(self) -> int:
        return self.events.shape[0]

    def __iter__(self):
        for ev, label in zip(self.events, self.labels):
            yield LabeledEvent(
                t=int(ev["t"]),
                x=int(ev["x"]),
                y=int(ev["y"]),
                p=int(ev["p"]),
                label=int(label),
            )

    @property
    def n_objects(self) -> int:
        return sum(1 for k in self.motions if k != 0)


def _in_mask_indices(window: EventWindow, mask: np.ndarray) -> np.ndarray:
    ev = window.events
    return np.nonzero(mask[ev["y"], ev["x"]])[0]


def estimate_ego_motion(
    window: EventWindow,
    salient_mask: np.ndarray,
    space: MotionSearchSpace,
    mode: str = "count",
    min_events: int = MIN_EVENTS_DEFAULT,
) -> MotionParams:
    """Dominant motion of the events outside the salient mask.

    An empty complement cannot be estimated from; zero motion is returned
    with a warning so the caller still gets a usable background label.
    """
    if salient_mask.shape != (window.height, window.width):
        raise ValueError("mask shape does not match the sensor")
    ev = window.events
    outside = ev[~salient_mask[ev["y"], ev["x"]]]
    if outside.shape[0] == 0:
        logger.warning("no events outside the salient mask; assuming zero ego motion")
        return MotionParams()
    complement = EventWindow(
        events=outside,
        t_start=window.t_start,
        t_end=window.t_end,
        width=window.width,
        height=window.height,
    )
    return grid_search_motion(complement, space, mode=mode, min_events=min_events).params


def bcmax_segment(
    window: EventWindow,
    salient_mask: np.ndarray,
    ego: MotionParams,
    cfg: BCMaxConfig,
) -> SegmentedEvents:
    """Split the in-mask events into per-object motion labels (see module doc)."""
    if salient_mask.shape != (window.height, window.width):
        raise ValueError("mask shape does not match the sensor")
    ev = window.events
    labels = np.zeros(ev.shape[0], dtype=np.uint16)
    motions: dict[int, MotionParams] = {0: ego}
    diagnostics: list[str] = []

    unlabeled = _in_mask_indices(window, salient_mask)
    initial = unlabeled.size
    iterations = 0
    label = 0
    while initial > 0:
        if unlabeled.size < cfg.termination_fraction * initial:
            break
        if unlabeled.size < cfg.min_events:
            diagnostics.append(
                f"stopped with {unlabeled.size} unlabeled events (< {cfg.min_events})"
            )
            break
        if iterations >= cfg.max_iterations:
            diagnostics.append(f"iteration cap {cfg.max_iterations} reached")
            break
        iterations += 1
        subset = EventWindow(
            events=ev[unlabeled],
            t_start=window.t_start,
            t_end=window.t_end,
            width=window.width,
            height=window.height,
        )
        try:
            found = grid_search_motion(
                subset, cfg.search, mode=cfg.iwe_mode, min_events=cfg.min_events
            )
        except ValueError as exc:
            diagnostics.append(f"iteration {iterations}: motion search failed ({exc})")
            break
        warped = warp_events(subset, found.params, t_ref_us=found.t_ref_us)
        iwe = accumulate_iwe(
            warped, subset.events["p"], window.height, window.width, cfg.iwe_mode
        )
        blur_map = dct_sharpness_map(
            np.abs(iwe.accumulation),
            num_scales=cfg.blur_scales,
            block=cfg.blur_block,
            downsample=cfg.blur_downsample,
        )
        sharp = sharp_region_mask(blur_map, cfg.dilation_radius)
        xi = np.rint(warped[:, 0]).astype(np.int64)
        yi = np.rint(warped[:, 1]).astype(np.int64)
        inside = (xi >= 0) & (xi < window.width) & (yi >= 0) & (yi < window.height)
        selected = np.zeros(unlabeled.size, dtype=bool)
        selected[inside] = sharp[yi[inside], xi[inside]]
        if not selected.any():
            # No progress is possible; spinning here would never terminate.
            diagnostics.append(
                f"iteration {iterations}: no events in the sharp region; "
                f"{unlabeled.size} events fall to the background"
            )
            break
        label += 1
        labels[unlabeled[selected]] = label
        motions[label] = found.params
        unlabeled = unlabeled[~selected]

    return SegmentedEvents(
        events=ev,
        labels=labels,
        motions=motions,
        width=window.width,
        height=window.height,
        iterations=iterations,
        diagnostics=tuple(diagnostics),
    )
