"""Batch pipeline: events in, labeled events / masks / reports out.

Per window: time surface -> patch features (+ flow features when flow files
are supplied) -> similarity graph -> normalized-cut saliency mask. The mask
sequence is then refined temporally, and each window's salient events are
split into per-object motions, written as a labeled-event file plus masks
and diagnostics. A window that fails any stage is marked and skipped; the
rest of the run continues.
"""

from __future__ import annotations

import configparser
import hashlib
import io as stdio
import json
import logging
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
from PIL import Image

from scipy.ndimage import binary_dilation, binary_fill_holes

from . import io as evio
from .bcmax import BCMaxConfig, SegmentedEvents, bcmax_segment, estimate_ego_motion
from .blur import disc_structure
from .cmax import (
    AxisGrid,
    MotionParams,
    MotionSearchSpace,
    accumulate_iwe,
    warp_events,
)
from .events import (
    EventStream,
    EventWindow,
    build_time_surface,
    render_frame,
    slice_windows,
)
from .features import (
    PatchFeatureGrid,
    builtin_patch_descriptor,
    flow_features,
    patch_grid_shape,
)
from .refine import DMRConfig, MaskSequence, dynamic_mask_refinement
from .saliency import (
    DENSE_SOLVER_LIMIT,
    EDGE_EPSILON,
    EDGE_TAU_DEFAULT,
    build_graph,
    cosine_similarity_matrix,
    mask_from_partition,
    ncut_bipartition,
)

logger = logging.getLogger(__name__)

STAGE_NAMES = (
    "time_surface",
    "flow",
    "frame_features",
    "flow_features",
    "graph",
    "dmr",
    "bcmax",
)


@dataclass
class PipelineConfig:
    # events
    delta_t_us: int = 20000
    tau_e_s: float = 0.1
    # features
    patch_size: int = 16
    bins: int = 8
    feature_source: str = "builtin"  # "builtin" or "external"
    flow_gap: int = 1
    # saliency
    tau: float = EDGE_TAU_DEFAULT
    epsilon: float = EDGE_EPSILON
    dense_limit: int = DENSE_SOLVER_LIMIT
    # dmr
    dmr_window: int = 5
    dmr_top_k: int = 5
    dmr_radius: int = 3
    dmr_threshold: float = 0.5
    dmr_temperature: float = 0.07
    # search
    v_max: float = 40.0
    v_step: float = 2.0
    hz_lo: float = 0.0
    hz_hi: float = 0.0
    hz_steps: int = 1
    phi_lo: float = 0.0
    phi_hi: float = 0.0
    phi_steps: int = 1
    refine_search: bool = False
    iwe_mode: str = "count"
    # bcmax
    termination_fraction: float = 0.1
    max_iterations: int = 10
    min_events: int = 30
    dilation_radius: int = 2
    blur_block: int = 16
    blur_scales: int = 2
    blur_downsample: bool = False
    # output
    mask_dilation: int = 2
    write_iwe_png: bool = True

    def dmr_config(self) -> DMRConfig:
        return DMRConfig(
            window=self.dmr_window,
            top_k=self.dmr_top_k,
            radius=self.dmr_radius,
            threshold=self.dmr_threshold,
            temperature=self.dmr_temperature,
        )

    def search_space(self) -> MotionSearchSpace:
        base = MotionSearchSpace.translation(self.v_max, self.v_step)
        hz = AxisGrid(self.hz_lo, self.hz_hi, self.hz_steps)
        phi = AxisGrid(self.phi_lo, self.phi_hi, self.phi_steps)
        return MotionSearchSpace(vx=base.vx, vy=base.vy, hz=hz, phi=phi)

    def bcmax_config(self) -> BCMaxConfig:
        return BCMaxConfig(
            search=self.search_space(),
            termination_fraction=self.termination_fraction,
            max_iterations=self.max_iterations,
            min_events=self.min_events,
            dilation_radius=self.dilation_radius,
            iwe_mode=self.iwe_mode,
            blur_block=self.blur_block,
            blur_scales=self.blur_scales,
            blur_downsample=self.blur_downsample,
        )


_SECTIONS = {
    "events": ("delta_t_us", "tau_e_s"),
    "features": ("patch_size", "bins", "feature_source", "flow_gap"),
    "saliency": ("tau", "epsilon", "dense_limit"),
    "dmr": ("dmr_window", "dmr_top_k", "dmr_radius", "dmr_threshold", "dmr_temperature"),
    "search": (
        "v_max",
        "v_step",
        "hz_lo",
        "hz_hi",
        "hz_steps",
        "phi_lo",
        "phi_hi",
        "phi_steps",
        "refine_search",
        "iwe_mode",
    ),
    "bcmax": (
        "termination_fraction",
        "max_iterations",
        "min_events",
        "dilation_radius",
        "blur_block",
        "blur_scales",
        "blur_downsample",
    ),
    "output": ("mask_dilation", "write_iwe_png"),
}


def config_to_ini(config: PipelineConfig) -> str:
    parser = configparser.ConfigParser()
    for section, keys in _SECTIONS.items():
        parser[section] = {key: str(getattr(config, key)) for key in keys}
    buffer = stdio.StringIO()
    parser.write(buffer)
    return buffer.getvalue()


def config_from_ini(text: str) -> PipelineConfig:
    parser = configparser.ConfigParser()
    parser.read_string(text)
    config = PipelineConfig()
    types = {f.name: f.type for f in fields(PipelineConfig)}
    casts = {"int": int, "float": float, "str": str, "bool": None}
    known = {key: section for section, keys in _SECTIONS.items() for key in keys}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ValueError(f"unknown config section [{section}]")
        for key, raw in parser[section].items():
            if known.get(key) != section:
                raise ValueError(f"unknown key {key!r} in section [{section}]")
            kind = types[key]
            if kind == "bool":
                value = raw.strip().lower() in ("1", "true", "yes", "on")
            else:
                value = casts[kind](raw)
            setattr(config, key, value)
    return config


def load_config(path: str | Path) -> PipelineConfig:
    return config_from_ini(Path(path).read_text())


def config_hash(config: PipelineConfig) -> str:
    return hashlib.sha256(config_to_ini(config).encode()).hexdigest()


class _StageClock:
    def __init__(self):
        self.totals = {name: 0.0 for name in STAGE_NAMES}

    def add(self, name: str, t0: float) -> float:
        now = time.perf_counter()
        self.totals[name] += now - t0
        return now


def _load_stream(path: str | Path) -> EventStream:
    path = Path(path)
    if path.suffix == ".csv":
        return evio.load_events_csv(path)
    return evio.load_events(path)


def _object_pixel_mask(
    seg_events: np.ndarray, labels: np.ndarray, label: int, shape, dilation: int
) -> np.ndarray:
    mask = np.zeros(shape, dtype=bool)
    chosen = labels == label
    mask[seg_events["y"][chosen], seg_events["x"][chosen]] = True
    if dilation > 0:
        mask = binary_dilation(mask, structure=disc_structure(dilation))
    return binary_fill_holes(mask)


def run_pipeline(
    events_path: str | Path,
    config: PipelineConfig,
    out_dir: str | Path,
    features_dir: str | Path | None = None,
    flow_dir: str | Path | None = None,
    seed: int = 0,
) -> dict:
    """Run the full segmentation pipeline; returns the run manifest."""
    out = Path(out_dir)
    (out / "windows").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(exist_ok=True)

    if config.feature_source == "external" and features_dir is None:
        raise ValueError("feature_source is 'external' but no features_dir given")

    stream = _load_stream(events_path)
    windows = slice_windows(stream, config.delta_t_us)
    clock = _StageClock()
    statuses: list[dict] = []

    grid_shape = patch_grid_shape(stream.height, stream.width, config.patch_size)
    n_patches = grid_shape[0] * grid_shape[1]

    feats = []
    masks = np.zeros((len(windows), stream.height, stream.width), dtype=bool)
    validity = np.zeros(len(windows), dtype=bool)
    for i, window in enumerate(windows):
        status = {"index": i, "n_events": len(window), "status": "ok"}
        frame_feat = None
        try:
            t0 = time.perf_counter()
            surface = build_time_surface(window, config.tau_e_s)
            frame = render_frame(surface)
            t0 = clock.add("time_surface", t0)
            if config.feature_source == "external":
                frame_feat = evio.load_feature_grid(
                    Path(features_dir) / f"features_{i:05d}.ftg"
                )
                if frame_feat.shape != grid_shape or frame_feat.patch_size != config.patch_size:
                    raise ValueError("external feature grid does not match sensor")
            else:
                frame_feat = builtin_patch_descriptor(
                    frame, config.patch_size, config.bins
                )
            t0 = clock.add("frame_features", t0)
            flow = None
            if flow_dir is not None:
                flow_path = Path(flow_dir) / f"flow_{i:05d}.flw"
                if flow_path.exists():
                    flow = evio.load_flow(flow_path)
            t0 = clock.add("flow", t0)
            if flow is not None:
                flow_feat = flow_features(flow, config.patch_size, config.bins)
                w_flow = cosine_similarity_matrix(flow_feat.flat)
            else:
                w_flow = np.zeros((n_patches, n_patches))
            t0 = clock.add("flow_features", t0)
            w_img = cosine_similarity_matrix(frame_feat.flat)
            graph = build_graph(w_img, w_flow, config.tau, config.epsilon)
            cut = ncut_bipartition(graph, config.dense_limit)
            masks[i] = mask_from_partition(
                cut.foreground,
                grid_shape,
                config.patch_size,
                stream.height,
                stream.width,
            )
            validity[i] = True
            clock.add("graph", t0)
        except Exception as exc:  # noqa: BLE001 - windows must not kill the run
            status["status"] = f"saliency failed: {exc}"
            logger.warning("window %d saliency failed: %s", i, exc)
        feats.append(frame_feat)
        statuses.append(status)

    # Feature grids are needed for every frame during refinement; replace
    # missing ones (failed windows) with zeros of the right shape.
    depth = next(
        (f.grid.shape[2] for f in feats if f is not None), config.bins + 3
    )
    for i, f in enumerate(feats):
        if f is None:
            feats[i] = PatchFeatureGrid(
                grid=np.zeros(grid_shape + (depth,), dtype=np.float32),
                patch_size=config.patch_size,
                source="builtin",
            )

    t0 = time.perf_counter()
    if validity.any():
        refined = dynamic_mask_refinement(
            MaskSequence(masks=masks, validity=validity),
            feats,
            config.dmr_config(),
        )
    else:
        refined = MaskSequence(masks=masks, validity=np.ones(len(windows), dtype=bool))
    clock.add("dmr", t0)

    space = config.search_space()
    bc_cfg = config.bcmax_config()
    for i, window in enumerate(windows):
        wdir = out / "windows" / f"w{i:05d}"
        wdir.mkdir(exist_ok=True)
        evio.save_mask_pgm(masks[i], wdir / "mask_raw.pgm")
        evio.save_mask_pgm(refined.masks[i], wdir / "mask_refined.pgm")
        try:
            t0 = time.perf_counter()
            if len(window) == 0:
                seg = SegmentedEvents(
                    events=window.events,
                    labels=np.zeros(0, dtype=np.uint16),
                    motions={0: MotionParams()},
                    width=window.width,
                    height=window.height,
                )
                statuses[i]["status"] = "empty"
            else:
                ego = estimate_ego_motion(
                    window,
                    refined.masks[i],
                    space,
                    mode=config.iwe_mode,
                    min_events=config.min_events,
                )
                seg = bcmax_segment(window, refined.masks[i], ego, bc_cfg)
            clock.add("bcmax", t0)
            evio.save_labeled_events(seg, wdir / "labeled.evl")
            label_ids = sorted(k for k in seg.motions if k != 0)
            meta = {
                "n_events": len(seg),
                "iterations": seg.iterations,
                "diagnostics": list(seg.diagnostics),
                "labels": {
                    str(k): {
                        "n_events": int((seg.labels == k).sum()),
                        "motion": list(seg.motions[k].as_tuple()),
                    }
                    for k in sorted(seg.motions)
                },
            }
            (wdir / "metrics.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
            for k in label_ids:
                pred_mask = _object_pixel_mask(
                    seg.events,
                    seg.labels,
                    k,
                    (stream.height, stream.width),
                    config.mask_dilation,
                )
                evio.save_mask_pgm(
                    pred_mask, out / "masks" / f"mask_f{i:05d}_o{k:02d}.pgm"
                )
                if config.write_iwe_png:
                    chosen = seg.labels == k
                    sub = window.events[chosen]
                    coords = warp_events(
                        EventWindow(
                            events=sub,
                            t_start=window.t_start,
                            t_end=window.t_end,
                            width=window.width,
                            height=window.height,
                        ),
                        seg.motions[k],
                    )
                    iwe = accumulate_iwe(
                        coords, sub["p"], window.height, window.width, "count"
                    )
                    peak = iwe.accumulation.max()
                    img = (
                        iwe.accumulation / peak * 255 if peak > 0 else iwe.accumulation
                    ).astype(np.uint8)
                    Image.fromarray(img).save(wdir / f"iwe_obj{k:02d}.png")
        except Exception as exc:  # noqa: BLE001
            statuses[i]["status"] = f"bcmax failed: {exc}"
            logger.warning("window %d labeling failed: %s", i, exc)

    manifest = {
        "config_hash": config_hash(config),
        "seed": seed,
        "n_windows": len(windows),
        "sensor": {"width": stream.width, "height": stream.height},
        "stages_s": {name: round(clock.totals[name], 6) for name in STAGE_NAMES},
        "windows": statuses,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    (out / "config.ini").write_text(config_to_ini(config))
    return manifest
