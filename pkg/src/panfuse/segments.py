"""Lift keyframe masks into voxelized 3D segments with pooled language features."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .geometry import CarrierPoint, back_project_depth, pack_keys, unpack_keys, voxelize_points
from .ingestion import Keyframe

log = logging.getLogger(__name__)


class DegenerateFeatureError(ValueError):
    pass


@dataclass(eq=False)
class Segment:
    seg_id: int
    source: tuple[int, int]  # (frame_id, mask_id)
    keys: np.ndarray  # sorted unique packed voxel keys
    carrier_positions: np.ndarray  # (len(keys), 3) centroid per voxel
    feature: np.ndarray
    pixel_count: int
    small: bool = False

    def __post_init__(self):
        if len(self.keys) == 0:
            raise ValueError(f"segment {self.seg_id} has no voxels")
        if self.source[1] < 1:
            raise ValueError("segment source mask id must be >= 1")

    @property
    def frame_id(self) -> int:
        return self.source[0]

    @property
    def voxels(self) -> set[tuple[int, int, int]]:
        return {tuple(int(c) for c in row) for row in unpack_keys(self.keys)}

    @property
    def carriers(self) -> list[CarrierPoint]:
        return [CarrierPoint(tuple(float(x) for x in p)) for p in self.carrier_positions]

    def __len__(self):
        return len(self.keys)


@dataclass
class SegmentRegistry:
    segments: list[Segment] = field(default_factory=list)
    by_frame: dict[int, list[int]] = field(default_factory=dict)

    def add(self, segs: list[Segment]):
        for s in segs:
            self.by_frame.setdefault(s.frame_id, []).append(len(self.segments))
            self.segments.append(s)

    def __len__(self):
        return len(self.segments)

    def __iter__(self):
        return iter(self.segments)

    def __getitem__(self, i) -> Segment:
        return self.segments[i]


def pool_feature(kf: Keyframe, mask_id: int) -> np.ndarray:
    """Average-pooled, L2-normalized language feature of one mask."""
    if kf.per_pixel:
        sel = kf.mask.reshape(-1) == mask_id
        if not sel.any():
            raise KeyError(f"mask id {mask_id} not present in frame {kf.frame_id}")
        f = np.asarray(kf.features, dtype=np.float64).reshape(-1, kf.feature_dim)[sel].mean(axis=0)
    else:
        if mask_id not in kf.features:
            raise KeyError(f"mask id {mask_id} not present in frame {kf.frame_id}")
        f = np.asarray(kf.features[mask_id], dtype=np.float64)
    n = np.linalg.norm(f)
    if not n > 0:
        raise DegenerateFeatureError(f"frame {kf.frame_id} mask {mask_id}: pooled feature is the zero vector")
    return f / n


def lift_segments(
    kf: Keyframe,
    voxel_size: float,
    *,
    first_id: int = 0,
    min_segment_voxels: int = 5,
    report: dict | None = None,
) -> list[Segment]:
    """One segment per mask id with at least one valid-depth pixel, ordered by mask id.

    Masks whose pixels all lack depth are dropped; the count goes to ``report["dropped"]``.
    """
    points, idx = back_project_depth(kf.intrinsics, kf.pose, kf.depth)
    mids = kf.mask.reshape(-1)[idx].astype(np.int64)
    labeled = mids != 0
    points, mids = points[labeled], mids[labeled]
    keys = pack_keys(voxelize_points(points, voxel_size))

    order = np.lexsort((keys, mids))
    mids, keys, points = mids[order], keys[order], points[order]

    segs = []
    present = kf.mask_ids()
    seg_bounds = np.flatnonzero(np.diff(mids)) + 1
    starts = np.concatenate([[0], seg_bounds]) if len(mids) else np.zeros(0, int)
    ends = np.concatenate([seg_bounds, [len(mids)]]) if len(mids) else np.zeros(0, int)
    for s, e in zip(starts, ends):
        mid = int(mids[s])
        k = keys[s:e]
        p = points[s:e]
        vb = np.concatenate([[0], np.flatnonzero(np.diff(k)) + 1])
        counts = np.diff(np.concatenate([vb, [len(k)]]))
        centroids = np.add.reduceat(p, vb, axis=0) / counts[:, None]
        seg = Segment(
            seg_id=first_id + len(segs),
            source=(kf.frame_id, mid),
            keys=k[vb].copy(),
            carrier_positions=centroids,
            feature=pool_feature(kf, mid),
            pixel_count=int(e - s),
            small=len(vb) < min_segment_voxels,
        )
        segs.append(seg)
    dropped = len(present) - len(segs)
    if report is not None:
        report["dropped"] = report.get("dropped", 0) + dropped
    if dropped:
        log.debug("frame %d: dropped %d masks without valid depth", kf.frame_id, dropped)
    return segs
