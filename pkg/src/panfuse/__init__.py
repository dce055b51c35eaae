"""Online open-vocabulary panoptic mapping over sparse voxel grids."""

from .checkpoint import load_map, save_map
from .cluster import EdgeCues, LocalInstance, cluster_window, geometry_cue, merge_decision, semantic_cue, view_consensus_cue
from .config import StreamConfig, load_config, window_starts
from .fusion import GlobalMap, MatchSet, ScoreMatrix, backward_scores, bidirectional_match, forward_scores, match, update_global
from .geometry import CameraIntrinsics, Pose, back_project, project, visible_voxels, voxelize
from .hungarian import hungarian
from .ingestion import Keyframe, Scene, SceneFormatError, read_scene
from .labels import ClassInfo, LabelSet
from .localmap import LocalMap, build_local_map
from .metrics import PanopticReport, compute_metrics
from .pipeline import Mapper, run_stream
from .query import instance_query, project_to_gt, semantic_labels
from .segments import Segment, SegmentRegistry, lift_segments, pool_feature
from .synthetic import SyntheticSpec, generate_synthetic, load_example_spec

__version__ = "0.1.0"

__all__ = [
    "CameraIntrinsics", "ClassInfo", "EdgeCues", "GlobalMap", "Keyframe", "LabelSet", "LocalInstance", "LocalMap",
    "Mapper", "MatchSet", "PanopticReport", "Pose", "Scene", "SceneFormatError", "ScoreMatrix", "Segment",
    "SegmentRegistry", "StreamConfig", "SyntheticSpec", "back_project", "backward_scores", "bidirectional_match",
    "build_local_map", "cluster_window", "compute_metrics", "forward_scores", "generate_synthetic", "geometry_cue",
    "hungarian", "instance_query", "lift_segments", "load_config", "load_example_spec", "load_map", "match",
    "merge_decision", "pool_feature", "project", "project_to_gt", "read_scene", "run_stream", "save_map",
    "semantic_cue", "semantic_labels", "update_global", "view_consensus_cue", "visible_voxels", "voxelize",
    "window_starts",
]
