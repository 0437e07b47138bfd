"""Command line front end.

Subcommands: segment (run the pipeline on an event file), synth (generate a
ground-truth scene from a JSON description), score (compare predicted and
ground-truth mask directories), dump-variance-grid (export the motion-search
variance surface of one window for inspection).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import re
import sys
from pathlib import Path

import numpy as np

from . import io as evio
from .metrics import (
    DetectionConfig,
    detection_rate,
    mean_matched_iou,
    write_report_csv,
    write_report_json,
)
from .pipeline import PipelineConfig, load_config, run_pipeline
from .synth import generate_scene, save_scene, scene_spec_from_json

logger = logging.getLogger(__name__)

_MASK_NAME = re.compile(r"mask_f(\d+)_o(\d+)\.pgm$")


def _cmd_segment(args) -> int:
    config = load_config(args.config) if args.config else PipelineConfig()
    if args.builtin_features:
        config.feature_source = "builtin"
    manifest = run_pipeline(
        args.events,
        config,
        args.out,
        features_dir=args.features_dir,
        flow_dir=args.flow_dir,
        seed=args.seed,
    )
    ok = sum(1 for w in manifest["windows"] if w["status"] in ("ok", "empty"))
    print(f"{manifest['n_windows']} windows ({ok} ok) -> {args.out}")
    return 0


def _cmd_synth(args) -> int:
    spec = scene_spec_from_json(Path(args.scene).read_text())
    data = generate_scene(spec, seed=args.seed)
    save_scene(data, args.out)
    print(f"{len(data.stream.events)} events, {len(data.flows)} frames -> {args.out}")
    return 0


def _collect_masks(directory: str | Path) -> dict[int, list[np.ndarray]]:
    """Per-frame instance masks found under a directory, keyed by frame index."""
    frames: dict[int, list[tuple[int, np.ndarray]]] = {}
    root = Path(directory)
    if not root.is_dir():
        raise FileNotFoundError(f"not a directory: {root}")
    for path in sorted(root.rglob("mask_f*_o*.pgm")):
        match = _MASK_NAME.fullmatch(path.name)
        if match is None:
            continue
        frame, instance = int(match.group(1)), int(match.group(2))
        frames.setdefault(frame, []).append((instance, evio.load_mask_pgm(path)))
    return {
        frame: [mask for _, mask in sorted(entries, key=lambda e: e[0])]
        for frame, entries in frames.items()
    }


def _cmd_score(args) -> int:
    pred = _collect_masks(args.pred)
    gt = _collect_masks(args.gt)
    if not gt:
        print("no ground-truth masks found", file=sys.stderr)
        return 1
    frames = sorted(set(pred) | set(gt))
    pred_seq = [pred.get(f, []) for f in frames]
    gt_seq = [gt.get(f, []) for f in frames]
    cfg = DetectionConfig(iou_threshold=args.iou_threshold)
    rate = detection_rate(pred_seq, gt_seq, cfg)
    miou = mean_matched_iou(pred_seq, gt_seq)
    name = Path(args.pred).name
    report = {
        "sequence": name,
        "n_frames": len(frames),
        "n_gt_instances": sum(len(g) for g in gt_seq),
        "n_pred_instances": sum(len(p) for p in pred_seq),
        "iou_threshold": args.iou_threshold,
        "detection_rate_pct": rate,
        "mean_matched_iou": miou,
    }
    out = Path(args.out) if args.out else Path(args.pred)
    out.mkdir(parents=True, exist_ok=True)
    write_report_json(report, out / "report.json")
    write_report_csv(
        [
            (name, "detection_rate_pct", rate),
            (name, "mean_matched_iou", miou),
        ],
        out / "report.csv",
    )
    print(f"detection_rate_pct={rate:.2f} mean_matched_iou={miou:.4f}")
    return 0


def _cmd_dump_grid(args) -> int:
    from .cmax import grid_search_motion
    from .events import slice_windows
    from .pipeline import _load_stream

    config = load_config(args.config) if args.config else PipelineConfig()
    stream = _load_stream(args.events)
    windows = slice_windows(stream, config.delta_t_us)
    if not 0 <= args.window_index < len(windows):
        print(
            f"window index {args.window_index} out of range (0..{len(windows) - 1})",
            file=sys.stderr,
        )
        return 1
    window = windows[args.window_index]
    if len(window) == 0:
        print("window is empty", file=sys.stderr)
        return 1
    space = config.search_space()
    result = grid_search_motion(window, space, mode=config.iwe_mode)
    values = [axis.values() for axis in space.axes()]
    with open(args.out, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["vx", "vy", "hz", "phi", "variance"])
        for idx in np.ndindex(result.grid.shape):
            writer.writerow(
                [
                    f"{values[0][idx[0]]:.6f}",
                    f"{values[1][idx[1]]:.6f}",
                    f"{values[2][idx[2]]:.6f}",
                    f"{values[3][idx[3]]:.6f}",
                    f"{result.grid[idx]:.9g}",
                ]
            )
    print(
        f"best vx={result.params.vx:g} vy={result.params.vy:g} "
        f"variance={result.variance:.6g} -> {args.out}"
    )
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evseg",
        description="Event-camera moving object segmentation.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    seg = sub.add_parser("segment", help="run the segmentation pipeline")
    seg.add_argument("events", help="input .evs or .csv event file")
    seg.add_argument("--config", help="INI pipeline configuration")
    seg.add_argument("--out", required=True, help="output directory")
    seg.add_argument("--features-dir", help="directory of external .ftg grids")
    seg.add_argument("--flow-dir", help="directory of .flw optical flow fields")
    seg.add_argument(
        "--builtin-features",
        action="store_true",
        help="force built-in patch descriptors regardless of config",
    )
    seg.add_argument("--seed", type=int, default=0)
    seg.set_defaults(func=_cmd_segment)

    syn = sub.add_parser("synth", help="generate a synthetic scene")
    syn.add_argument("scene", help="scene description JSON")
    syn.add_argument("--out", required=True, help="output directory")
    syn.add_argument("--seed", type=int, default=0)
    syn.set_defaults(func=_cmd_synth)

    sco = sub.add_parser("score", help="compare predicted and ground-truth masks")
    sco.add_argument("--pred", required=True, help="directory of predicted masks")
    sco.add_argument("--gt", required=True, help="directory of ground-truth masks")
    sco.add_argument("--iou-threshold", type=float, default=0.5)
    sco.add_argument("--out", help="report directory (default: the pred directory)")
    sco.set_defaults(func=_cmd_score)

    dump = sub.add_parser(
        "dump-variance-grid", help="export one window's motion-search surface"
    )
    dump.add_argument("events", help="input .evs or .csv event file")
    dump.add_argument("--config", help="INI pipeline configuration")
    dump.add_argument("--window-index", type=int, default=0)
    dump.add_argument("--out", required=True, help="output CSV path")
    dump.set_defaults(func=_cmd_dump_grid)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
