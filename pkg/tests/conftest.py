from __future__ import annotations

import numpy as np
import pytest

from panfuse.config import StreamConfig
from panfuse.geometry import CameraIntrinsics, Pose
from panfuse.ingestion import Keyframe
from panfuse.metrics import compute_metrics
from panfuse.pipeline import run_stream
from panfuse.query import count_thing_instances, project_to_gt
from panfuse.synthetic import generate_synthetic, load_example_spec

CLEAN_CONFIG = StreamConfig(keyframe_stride=1)


def make_frame(
    depth,
    mask,
    features=None,
    *,
    frame_id=0,
    pose=None,
    conf=None,
    fx=10.0,
    dim=4,
) -> Keyframe:
    """Small keyframe with a centered principal point; per-mask one-hot features by default."""
    depth = np.asarray(depth, dtype=np.float32)
    mask = np.asarray(mask, dtype=np.uint32)
    h, w = depth.shape
    intr = CameraIntrinsics(fx, fx, (w - 1) / 2, (h - 1) / 2, w, h)
    if features is None:
        features = {}
        for mid in np.unique(mask):
            if mid:
                f = np.zeros(dim, dtype=np.float32)
                f[(int(mid) - 1) % dim] = 1.0
                features[int(mid)] = f
    if conf is None:
        conf = np.where(mask > 0, 1.0, 0.0).astype(np.float32)
    return Keyframe(frame_id, intr, pose or Pose.identity(), depth, mask, features, np.asarray(conf, np.float32))


def evaluate(gmap, scene):
    """Project a map onto the scene's GT points and score it."""
    pc, pi = project_to_gt(gmap, scene.gt.points, scene.labels)
    report = compute_metrics(pc, pi, scene.gt.classes, scene.gt.instances, scene.labels)
    accuracy = float(np.mean(pc[scene.gt.classes > 0] == scene.gt.classes[scene.gt.classes > 0]))
    return report, accuracy, count_thing_instances(gmap, scene.labels)


@pytest.fixture(scope="session")
def clean_scene():
    return generate_synthetic(load_example_spec(), seed=0)


@pytest.fixture(scope="session")
def clean_mapper(clean_scene):
    return run_stream(clean_scene.keyframes, CLEAN_CONFIG)


@pytest.fixture(scope="session")
def split_scene():
    return generate_synthetic(load_example_spec(over_segmentation_k=3, id_flicker_prob=1.0), seed=0)
