"""Moving object segmentation for event cameras.

Saliency from a normalized cut over patch-feature graphs, temporal mask
refinement, and per-object motion fitting by contrast maximization with
sharpness-guided labeling.
"""

from .bcmax import BCMaxConfig, SegmentedEvents, bcmax_segment, estimate_ego_motion
from .blur import BlurMap, dct_sharpness_map, disc_structure, sharp_region_mask
from .cmax import (
    IWE,
    AxisGrid,
    GridSearchResult,
    MotionParams,
    MotionSearchSpace,
    accumulate_iwe,
    contrast_variance,
    grid_search_motion,
    warp_events,
)
from .events import (
    EVENT_DTYPE,
    EventStream,
    EventWindow,
    UnsortedStreamError,
    build_time_surface,
    make_events,
    render_frame,
    slice_windows,
    unrender_frame,
)
from .features import (
    FlowField,
    PatchFeatureGrid,
    builtin_patch_descriptor,
    flow_features,
    synth_flow_from_motion,
)
from .io import (
    BadMagicError,
    DimensionError,
    FileFormatError,
    TruncatedPayloadError,
    load_events,
    load_events_csv,
    load_feature_grid,
    load_flow,
    load_labeled_events,
    load_mask_pgm,
    save_events,
    save_events_csv,
    save_feature_grid,
    save_flow,
    save_labeled_events,
    save_mask_pgm,
)
from .metrics import (
    DetectionConfig,
    detection_rate,
    instance_masks_from_labels,
    iou,
    match_instances,
    mean_matched_iou,
)
from .pipeline import PipelineConfig, config_hash, load_config, run_pipeline
from .refine import (
    DMRConfig,
    MaskSequence,
    coherence_losses,
    dynamic_mask_refinement,
    propagate_mask,
    select_keyframe,
)
from .saliency import (
    DegenerateGraphError,
    EigenSolverError,
    NCutResult,
    SimilarityGraph,
    build_graph,
    cosine_similarity_matrix,
    mask_from_partition,
    ncut_bipartition,
)
from .synth import (
    ObjectSpec,
    SceneData,
    SceneSpec,
    generate_scene,
    save_scene,
    scene_spec_from_json,
)

__version__ = "0.1.0"

__all__ = [
    "AxisGrid",
    "BCMaxConfig",
    "BadMagicError",
    "BlurMap",
    "DMRConfig",
    "DegenerateGraphError",
    "DetectionConfig",
    "DimensionError",
    "EVENT_DTYPE",
    "EigenSolverError",
    "EventStream",
    "EventWindow",
    "FileFormatError",
    "FlowField",
    "GridSearchResult",
    "IWE",
    "MaskSequence",
    "MotionParams",
    "MotionSearchSpace",
    "NCutResult",
    "ObjectSpec",
    "PatchFeatureGrid",
    "PipelineConfig",
    "SceneData",
    "SceneSpec",
    "SegmentedEvents",
    "SimilarityGraph",
    "TruncatedPayloadError",
    "UnsortedStreamError",
    "accumulate_iwe",
    "bcmax_segment",
    "build_graph",
    "build_time_surface",
    "builtin_patch_descriptor",
    "coherence_losses",
    "config_hash",
    "contrast_variance",
    "cosine_similarity_matrix",
    "dct_sharpness_map",
    "detection_rate",
    "disc_structure",
    "dynamic_mask_refinement",
    "estimate_ego_motion",
    "flow_features",
    "generate_scene",
    "grid_search_motion",
    "instance_masks_from_labels",
    "iou",
    "load_config",
    "load_events",
    "load_events_csv",
    "load_feature_grid",
    "load_flow",
    "load_labeled_events",
    "load_mask_pgm",
    "make_events",
    "mask_from_partition",
    "match_instances",
    "mean_matched_iou",
    "ncut_bipartition",
    "propagate_mask",
    "render_frame",
    "run_pipeline",
    "save_events",
    "save_events_csv",
    "save_feature_grid",
    "save_flow",
    "save_labeled_events",
    "save_mask_pgm",
    "save_scene",
    "scene_spec_from_json",
    "select_keyframe",
    "sharp_region_mask",
    "slice_windows",
    "synth_flow_from_motion",
    "unrender_frame",
    "warp_events",
]
