"""Event stream primitives: validated event arrays, windowing, time surfaces.

Events are kept as a numpy structured array (fields t, x, y, p) rather than
per-event objects; every downstream stage is array-oriented. Polarity is
stored as -1/+1 int8 regardless of what the source encoding was.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EVENT_DTYPE = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "<i1")])

# Decay constant of the time surface, seconds.
TAU_E_DEFAULT = 0.1


class UnsortedStreamError(ValueError):
    """Raised when event timestamps decrease; carries the offending index."""

    def __init__(self, index: int):
        self.index = int(index)
        super().__init__(f"event timestamps decrease at index {self.index}")


def make_events(t, x, y, p) -> np.ndarray:
    """Build a validated event array from parallel sequences.

    Polarities may be given as {0, 1} or {-1, +1}; zeros are mapped to -1 so
    the stored encoding is always -1/+1.
    """
    t = np.asarray(t, dtype=np.uint64)
    x = np.asarray(x)
    y = np.asarray(y)
    p = np.asarray(p, dtype=np.int64)
    if not (t.shape == x.shape == y.shape == p.shape):
        raise ValueError("t, x, y, p must have identical lengths")
    if np.any((x < 0) | (x > np.iinfo(np.uint16).max)):
        raise ValueError("x coordinates outside uint16 range")
    if np.any((y < 0) | (y > np.iinfo(np.uint16).max)):
        raise ValueError("y coordinates outside uint16 range")
    bad = ~np.isin(p, (-1, 0, 1))
    if np.any(bad):
        raise ValueError(f"invalid polarity value {p[bad][0]}")
    out = np.empty(t.shape[0], dtype=EVENT_DTYPE)
    out["t"] = t
    out["x"] = x.astype(np.uint16)
    out["y"] = y.astype(np.uint16)
    out["p"] = np.where(p > 0, 1, -1).astype(np.int8)
    return out


def _check_sorted(t: np.ndarray) -> None:
    if t.shape[0] > 1:
        drops = np.nonzero(np.diff(t.astype(np.int64)) < 0)[0]
        if drops.size:
            raise UnsortedStreamError(drops[0] + 1)


def _check_bounds(events: np.ndarray, width: int, height: int) -> None:
    if events.shape[0] == 0:
        return
    if events["x"].max() >= width or events["y"].max() >= height:
        raise ValueError("event coordinates outside sensor bounds")


@dataclass(frozen=True)
class EventStream:
    """A full recording: monotonically timestamped events plus sensor size."""

    events: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        if self.events.dtype != EVENT_DTYPE:
            raise ValueError("events must use EVENT_DTYPE")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("sensor dimensions must be positive")
        _check_sorted(self.events["t"])
        _check_bounds(self.events, self.width, self.height)

    def __len__(self) -> int:
        return self.events.shape[0]


@dataclass(frozen=True)
class EventWindow:
    """Events of one time slice [t_start, t_end) of a stream."""

    events: np.ndarray
    t_start: int
    t_end: int
    width: int
    height: int

    def __post_init__(self):
        if self.t_end <= self.t_start:
            raise ValueError("window must have positive duration")
        if self.events.shape[0]:
            t = self.events["t"]
            _check_sorted(t)
            if t[0] < self.t_start or t[-1] >= self.t_end:
                raise ValueError("window contains events outside its span")
        _check_bounds(self.events, self.width, self.height)

    def __len__(self) -> int:
        return self.events.shape[0]

    @property
    def duration_us(self) -> int:
        return self.t_end - self.t_start

    @property
    def midpoint_us(self) -> float:
        return 0.5 * (self.t_start + self.t_end)


def slice_windows(stream: EventStream, delta_t_us: int) -> list[EventWindow]:
    """Tile [t_first, t_last] with windows of width delta_t_us.

    Every event lands in exactly one window; windows without events are still
    emitted so the sequence has no temporal holes. An empty stream yields an
    empty list.
    """
    if delta_t_us <= 0:
        raise ValueError("delta_t_us must be positive")
    ev = stream.events
    if ev.shape[0] == 0:
        return []
    t = ev["t"]
    t_first = int(t[0])
    t_last = int(t[-1])
    n_windows = (t_last - t_first) // delta_t_us + 1
    edges = t_first + delta_t_us * np.arange(n_windows + 1, dtype=np.int64)
    starts = np.searchsorted(t, edges[:-1].astype(np.uint64), side="left")
    stops = np.searchsorted(t, edges[1:].astype(np.uint64), side="left")
    return [
        EventWindow(
            events=ev[a:b],
            t_start=int(edges[i]),
            t_end=int(edges[i + 1]),
            width=stream.width,
            height=stream.height,
        )
        for i, (a, b) in enumerate(zip(starts, stops))
    ]


@dataclass(frozen=True)
class TimeSurface:
    """Per-pixel decayed polarity at a query time; values in [-1, 1]."""

    values: np.ndarray
    tau_e: float
    t_query: float


def build_time_surface(
    window: EventWindow, tau_e: float = TAU_E_DEFAULT, t_query: float | None = None
) -> TimeSurface:
    """Linearly decayed polarity of the most recent event per pixel.

    value = p * (1 - age / (2 * tau_e)) with age = t_query - t of the latest
    event at that pixel; ages beyond 2 * tau_e and untouched pixels are 0.
    tau_e is in seconds, timestamps in microseconds.
    """
    if tau_e <= 0:
        raise ValueError("tau_e must be positive")
    if t_query is None:
        t_query = float(window.t_end)
    values = np.zeros((window.height, window.width), dtype=np.float64)
    ev = window.events
    if ev.shape[0]:
        if t_query < ev["t"][-1]:
            raise ValueError("t_query must be at or after the last event")
        # Last event per pixel: first occurrence in the reversed stream.
        lin = ev["y"].astype(np.int64) * window.width + ev["x"].astype(np.int64)
        uniq, first_rev = np.unique(lin[::-1], return_index=True)
        last = ev.shape[0] - 1 - first_rev
        age_s = (t_query - ev["t"][last].astype(np.float64)) * 1e-6
        decayed = ev["p"][last].astype(np.float64) * (1.0 - age_s / (2.0 * tau_e))
        decayed[age_s > 2.0 * tau_e] = 0.0
        values.flat[uniq] = decayed
    return TimeSurface(values=values, tau_e=tau_e, t_query=float(t_query))


# Quantized rendering of a time surface. Positive values ramp the red
# channel, negative values the blue channel, exact zero is neutral gray;
# the map is invertible on the 511-level quantized value grid.
NEUTRAL_GRAY = 128


def render_frame(surface: TimeSurface) -> np.ndarray:
    """Render a time surface to a 3-channel uint8 image (see module note)."""
    q = np.rint(surface.values * 255.0).astype(np.int64)
    if np.any(np.abs(q) > 255):
        raise ValueError("time surface values outside [-1, 1]")
    frame = np.zeros(surface.values.shape + (3,), dtype=np.uint8)
    pos = q > 0
    neg = q < 0
    frame[..., 0][pos] = q[pos]
    frame[..., 2][neg] = -q[neg]
    frame[q == 0] = NEUTRAL_GRAY
    return frame


def unrender_frame(frame: np.ndarray) -> np.ndarray:
    """Invert render_frame back to quantized surface values (for testing)."""
    q = frame[..., 0].astype(np.float64) - frame[..., 2].astype(np.float64)
    q[(frame == NEUTRAL_GRAY).all(axis=-1)] = 0.0
    return q / 255.0
