"""Synthetic event scenes with exact ground truth.

Events come from an edge-crossing model: a pixel fires exactly when the
boundary of a moving shape sweeps across its center, with the entering
crossing carrying the shape's contrast sign and the leaving crossing the
opposite sign. Crossing times for translating rectangles/bars (interval
algebra) and discs (quadratic roots) are computed in closed form, so
timestamps are exact up to microsecond rounding. Regions are composited
independently (no occlusion model); these streams are oracles for tests,
not photometric simulations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io as evio
from .cmax import MotionParams
from .events import EventStream, make_events
from .features import FlowField, synth_flow_from_motion
from .refine import MaskSequence

SHAPES = ("rectangle", "disc", "bar")


@dataclass(frozen=True)
class ObjectSpec:
    shape: str  # "rectangle", "bar" (w, h) or "disc" (diameter)
    size: tuple[float, float]
    position: tuple[float, float]  # center at t = 0
    motion: MotionParams
    contrast: int = 1  # polarity of the entering edge

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}")
        if min(self.size) <= 0:
            raise ValueError("shape size must be positive")
        if self.contrast not in (-1, 1):
            raise ValueError("contrast must be -1 or +1")
        if not self.motion.is_translation:
            raise ValueError("only translational object motion is supported")


@dataclass(frozen=True)
class SceneSpec:
    width: int
    height: int
    duration: float  # seconds
    ego: MotionParams = MotionParams()
    objects: tuple[ObjectSpec, ...] = ()
    noise_rate: float = 0.0  # events / pixel / second
    background_features: int = 0  # seeded dots that move with the ego motion
    delta_t_us: int = 20000  # cadence of the emitted mask/flow sequences

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("sensor dimensions must be positive")
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.noise_rate < 0 or self.background_features < 0:
            raise ValueError("noise_rate and background_features must be >= 0")
        if self.delta_t_us <= 0:
            raise ValueError("delta_t_us must be positive")
        if not self.ego.is_translation:
            raise ValueError("only translational ego motion is supported")


@dataclass(frozen=True)
class SceneData:
    stream: EventStream
    labels: np.ndarray  # ground-truth label per event, 0 = background/noise
    masks: MaskSequence  # union object occupancy per frame
    object_masks: list[list[np.ndarray]]  # [frame][object] occupancy
    flows: list[FlowField]
    motions: dict[int, MotionParams]  # 0 = ego, 1..K = objects
    spec: SceneSpec
    seed: int


def _sweep_bbox(obj: ObjectSpec, duration: float, width: int, height: int):
    """Integer pixel range the shape can touch while moving, clipped to sensor."""
    cx0, cy0 = obj.position
    cx1 = cx0 + obj.motion.vx * duration
    cy1 = cy0 + obj.motion.vy * duration
    half_w, half_h = _half_extents(obj)
    x_lo = max(0, int(np.floor(min(cx0, cx1) - half_w)) - 1)
    x_hi = min(width - 1, int(np.ceil(max(cx0, cx1) + half_w)) + 1)
    y_lo = max(0, int(np.floor(min(cy0, cy1) - half_h)) - 1)
    y_hi = min(height - 1, int(np.ceil(max(cy0, cy1) + half_h)) + 1)
    return x_lo, x_hi, y_lo, y_hi


def _half_extents(obj: ObjectSpec) -> tuple[float, float]:
    if obj.shape == "disc":
        r = obj.size[0] / 2.0
        return r, r
    return obj.size[0] / 2.0, obj.size[1] / 2.0


def _axis_interval(p: np.ndarray, c0: float, v: float, half: float):
    """Times during which |p - c0 - v t| < half, as (lo, hi) arrays."""
    if v == 0.0:
        always = np.abs(p - c0) < half
        lo = np.where(always, -np.inf, np.inf)
        hi = np.where(always, np.inf, -np.inf)
        return lo, hi
    t_a = (p - half - c0) / v
    t_b = (p + half - c0) / v
    return np.minimum(t_a, t_b), np.maximum(t_a, t_b)


def _crossing_times(obj: ObjectSpec, duration: float, width: int, height: int):
    """Exact enter/exit times per swept pixel; returns (x, y, t_enter, t_exit)
    with NaN where a pixel is never covered."""
    x_lo, x_hi, y_lo, y_hi = _sweep_bbox(obj, duration, width, height)
    if x_lo > x_hi or y_lo > y_hi:
        empty = np.empty(0)
        return empty, empty, empty, empty
    xs = np.arange(x_lo, x_hi + 1, dtype=np.float64)
    ys = np.arange(y_lo, y_hi + 1, dtype=np.float64)
    px, py = np.meshgrid(xs, ys)
    cx0, cy0 = obj.position
    vx, vy = obj.motion.vx, obj.motion.vy
    if obj.shape == "disc":
        r = obj.size[0] / 2.0
        dx = px - cx0
        dy = py - cy0
        a = vx * vx + vy * vy
        if a == 0.0:
            return np.empty(0), np.empty(0), np.empty(0), np.empty(0)
        b = -2.0 * (dx * vx + dy * vy)
        c = dx * dx + dy * dy - r * r
        disc = b * b - 4.0 * a * c
        hit = disc > 0
        sq = np.sqrt(np.where(hit, disc, 0.0))
        enter = np.where(hit, (-b - sq) / (2 * a), np.nan)
        leave = np.where(hit, (-b + sq) / (2 * a), np.nan)
    else:
        half_w, half_h = _half_extents(obj)
        x_in, x_out = _axis_interval(px, cx0, vx, half_w)
        y_in, y_out = _axis_interval(py, cy0, vy, half_h)
        enter = np.maximum(x_in, y_in)
        leave = np.minimum(x_out, y_out)
        hit = enter < leave
        enter = np.where(hit, enter, np.nan)
        leave = np.where(hit, leave, np.nan)
    return px.ravel(), py.ravel(), enter.ravel(), leave.ravel()


def _object_events(obj: ObjectSpec, duration: float, width: int, height: int):
    """Edge-crossing events of one shape: (t_us, x, y, p) arrays."""
    px, py, enter, leave = _crossing_times(obj, duration, width, height)
    if px.size == 0:
        return (np.empty(0, np.uint64), np.empty(0, int), np.empty(0, int), np.empty(0, int))
    ts, xs, ys, ps = [], [], [], []
    for times, polarity in ((enter, obj.contrast), (leave, -obj.contrast)):
        ok = np.isfinite(times) & (times > 0) & (times <= duration)
        ts.append(np.rint(times[ok] * 1e6).astype(np.uint64))
        xs.append(px[ok].astype(np.int64))
        ys.append(py[ok].astype(np.int64))
        ps.append(np.full(ok.sum(), polarity, dtype=np.int64))
    return (np.concatenate(ts), np.concatenate(xs), np.concatenate(ys), np.concatenate(ps))


def _occupancy(obj: ObjectSpec, t: float, width: int, height: int) -> np.ndarray:
    cx = obj.position[0] + obj.motion.vx * t
    cy = obj.position[1] + obj.motion.vy * t
    xs = np.arange(width, dtype=np.float64)
    ys = np.arange(height, dtype=np.float64)
    px, py = np.meshgrid(xs, ys)
    if obj.shape == "disc":
        r = obj.size[0] / 2.0
        return (px - cx) ** 2 + (py - cy) ** 2 < r * r
    half_w, half_h = _half_extents(obj)
    return (np.abs(px - cx) < half_w) & (np.abs(py - cy) < half_h)


def _background_objects(spec: SceneSpec, rng: np.random.Generator) -> list[ObjectSpec]:
    dots = []
    for _ in range(spec.background_features):
        radius = rng.uniform(1.0, 3.0)
        dots.append(
            ObjectSpec(
                shape="disc",
                size=(2 * radius, 2 * radius),
                position=(
                    rng.uniform(0, spec.width - 1),
                    rng.uniform(0, spec.height - 1),
                ),
                motion=spec.ego,
                contrast=int(rng.choice((-1, 1))),
            )
        )
    return dots


def generate_scene(spec: SceneSpec, seed: int = 0) -> SceneData:
    """Deterministic scene synthesis; identical seeds give identical streams."""
    rng = np.random.default_rng(seed)
    duration_us = int(round(spec.duration * 1e6))

    all_t, all_x, all_y, all_p, all_l = [], [], [], [], []
    for index, obj in enumerate(spec.objects, start=1):
        t, x, y, p = _object_events(obj, spec.duration, spec.width, spec.height)
        all_t.append(t)
        all_x.append(x)
        all_y.append(y)
        all_p.append(p)
        all_l.append(np.full(t.shape[0], index, dtype=np.int64))

    for dot in _background_objects(spec, rng):
        t, x, y, p = _object_events(dot, spec.duration, spec.width, spec.height)
        all_t.append(t)
        all_x.append(x)
        all_y.append(y)
        all_p.append(p)
        all_l.append(np.zeros(t.shape[0], dtype=np.int64))

    if spec.noise_rate > 0:
        n_noise = rng.poisson(spec.noise_rate * spec.width * spec.height * spec.duration)
        all_t.append(rng.integers(0, duration_us + 1, size=n_noise).astype(np.uint64))
        all_x.append(rng.integers(0, spec.width, size=n_noise))
        all_y.append(rng.integers(0, spec.height, size=n_noise))
        all_p.append(rng.choice((-1, 1), size=n_noise))
        all_l.append(np.zeros(n_noise, dtype=np.int64))

    t = np.concatenate(all_t) if all_t else np.empty(0, np.uint64)
    x = np.concatenate(all_x) if all_x else np.empty(0, int)
    y = np.concatenate(all_y) if all_y else np.empty(0, int)
    p = np.concatenate(all_p) if all_p else np.empty(0, int)
    labels = np.concatenate(all_l) if all_l else np.empty(0, np.int64)

    order = np.argsort(t, kind="stable")
    events = make_events(t[order], x[order], y[order], p[order])
    labels = labels[order]
    stream = EventStream(events=events, width=spec.width, height=spec.height)

    n_frames = max(1, int(np.ceil(duration_us / spec.delta_t_us)))
    union_masks = np.zeros((n_frames, spec.height, spec.width), dtype=bool)
    object_masks: list[list[np.ndarray]] = []
    flows: list[FlowField] = []
    dt_s = spec.delta_t_us * 1e-6
    for f in range(n_frames):
        t_mid = (f + 0.5) * dt_s
        per_object = []
        flow = synth_flow_from_motion(spec.ego, spec.height, spec.width, dt_s).uv.copy()
        for obj in spec.objects:
            occ = _occupancy(obj, t_mid, spec.width, spec.height)
            per_object.append(occ)
            union_masks[f] |= occ
            flow[occ] = (obj.motion.vx * dt_s, obj.motion.vy * dt_s)
        object_masks.append(per_object)
        flows.append(FlowField(uv=flow))

    motions = {0: spec.ego}
    for index, obj in enumerate(spec.objects, start=1):
        motions[index] = obj.motion
    return SceneData(
        stream=stream,
        labels=labels,
        masks=MaskSequence(masks=union_masks, validity=np.ones(n_frames, dtype=bool)),
        object_masks=object_masks,
        flows=flows,
        motions=motions,
        spec=spec,
        seed=seed,
    )


def _motion_from_dict(d: dict) -> MotionParams:
    return MotionParams(
        vx=float(d.get("vx", 0.0)),
        vy=float(d.get("vy", 0.0)),
        hz=float(d.get("hz", 0.0)),
        phi=float(d.get("phi", 0.0)),
    )


def scene_spec_from_json(text: str) -> SceneSpec:
    """Parse a scene description; unknown keys are rejected."""
    data = json.loads(text)
    scene_keys = {
        "width", "height", "duration", "ego", "objects",
        "noise_rate", "background_features", "delta_t_us",
    }
    extra = set(data) - scene_keys
    if extra:
        raise ValueError(f"unknown scene keys: {sorted(extra)}")
    objects = []
    for entry in data.get("objects", ()):
        obj_keys = {"shape", "size", "position", "motion", "contrast"}
        extra = set(entry) - obj_keys
        if extra:
            raise ValueError(f"unknown object keys: {sorted(extra)}")
        size = entry["size"]
        if np.isscalar(size):
            size = (size, size)
        objects.append(
            ObjectSpec(
                shape=entry["shape"],
                size=(float(size[0]), float(size[1])),
                position=(float(entry["position"][0]), float(entry["position"][1])),
                motion=_motion_from_dict(entry.get("motion", {})),
                contrast=int(entry.get("contrast", 1)),
            )
        )
    return SceneSpec(
        width=int(data["width"]),
        height=int(data["height"]),
        duration=float(data["duration"]),
        ego=_motion_from_dict(data.get("ego", {})),
        objects=tuple(objects),
        noise_rate=float(data.get("noise_rate", 0.0)),
        background_features=int(data.get("background_features", 0)),
        delta_t_us=int(data.get("delta_t_us", 20000)),
    )


def save_scene(data: SceneData, out_dir: str | Path) -> None:
    """Write a generated scene in the layout the pipeline and scorer expect.

    events.evs, per-frame flow_*.flw, per-frame/per-object ground-truth masks
    under masks/, and a scene.json manifest with the motion table.
    """
    out = Path(out_dir)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    evio.save_events(data.stream, out / "events.evs")
    np.save(out / "labels.npy", data.labels)
    for f, flow in enumerate(data.flows):
        evio.save_flow(flow, out / f"flow_{f:05d}.flw")
    for f, per_object in enumerate(data.object_masks):
        evio.save_mask_pgm(data.masks.masks[f], out / "masks" / f"union_f{f:05d}.pgm")
        for k, occ in enumerate(per_object, start=1):
            evio.save_mask_pgm(occ, out / "masks" / f"mask_f{f:05d}_o{k:02d}.pgm")
    manifest = {
        "width": data.spec.width,
        "height": data.spec.height,
        "duration": data.spec.duration,
        "delta_t_us": data.spec.delta_t_us,
        "seed": data.seed,
        "n_events": len(data.stream.events),
        "n_frames": len(data.flows),
        "motions": {str(k): list(m.as_tuple()) for k, m in sorted(data.motions.items())},
    }
    (out / "scene.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
