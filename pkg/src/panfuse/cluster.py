"""Multi-cue segment graph and connected-component clustering over one window."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .config import StreamConfig
from .geometry import unpack_keys, visibility_mask
from .ingestion import Keyframe
from .segments import Segment, SegmentRegistry


@dataclass(frozen=True)
class EdgeCues:
    O: float
    X: float
    V: float


@dataclass(eq=False)
class LocalInstance:
    instance_id: int
    member_segments: list[int]
    keys: np.ndarray
    feature: np.ndarray
    N: int

    @property
    def voxels(self) -> set[tuple[int, int, int]]:
        return {tuple(int(c) for c in row) for row in unpack_keys(self.keys)}


class WindowVisibility:
    """Visibility of every window segment from every window keyframe.

    For segment s and keyframe k this caches the number of visible voxels and the
    strict-majority nonzero mask id those voxels land on (0 when there is none).
    """

    def __init__(self, segments: list[Segment], keyframes: list[Keyframe], voxel_size: float, depth_tolerance: float):
        self.frame_index = {kf.frame_id: i for i, kf in enumerate(keyframes)}
        n, m = len(segments), len(keyframes)
        self.sizes = np.array([len(s) for s in segments], dtype=np.int64)
        self.vis_count = np.zeros((n, m), dtype=np.int64)
        self.majority = np.zeros((n, m), dtype=np.int64)
        if n == 0:
            return
        all_keys = np.concatenate([s.keys for s in segments])
        owner = np.repeat(np.arange(n), self.sizes)
        for k, kf in enumerate(keyframes):
            vis, pix = visibility_mask(all_keys, kf.intrinsics, kf.pose, kf.depth, voxel_size, depth_tolerance)
            self.vis_count[:, k] = np.bincount(owner[vis], minlength=n)
            ids = kf.mask.reshape(-1)[pix[vis]].astype(np.int64)
            own = owner[vis]
            if len(ids) == 0:
                continue
            pairs, counts = np.unique(np.stack([own, ids], axis=1), axis=0, return_counts=True)
            for (s, mid), c in zip(pairs, counts):
                if mid != 0 and 2 * c > self.vis_count[s, k]:
                    self.majority[s, k] = mid

    def containment_count(self, i: int, j: int, source_frame: int) -> int:
        """Voxels of segment j visible from the keyframe that produced segment i."""
        return int(self.vis_count[j, self.frame_index[source_frame]])


def _overlap(n_shared: int, cont_ij: int, cont_ji: int) -> float:
    a = n_shared / cont_ij if cont_ij > 0 else 0.0
    b = n_shared / cont_ji if cont_ji > 0 else 0.0
    return float(min(1.0, max(0.0, 0.5 * (a + b))))


def geometry_cue(seg_i: Segment, seg_j: Segment, views: dict[int, Keyframe], depth_tolerance: float, voxel_size: float) -> float:
    """Visibility-normalized voxel overlap of two segments, in [0, 1]."""
    shared = np.intersect1d(seg_i.keys, seg_j.keys, assume_unique=True).size
    if shared == 0:
        return 0.0

    def cont(ref: Segment, other: Segment) -> int:
        kf = views[ref.frame_id]
        vis, _ = visibility_mask(other.keys, kf.intrinsics, kf.pose, kf.depth, voxel_size, depth_tolerance)
        return int(vis.sum())

    return _overlap(shared, cont(seg_i, seg_j), cont(seg_j, seg_i))


def semantic_cue(z_i: np.ndarray, z_j: np.ndarray) -> float:
    return float(np.clip(np.dot(z_i, z_j), -1.0, 1.0))


def view_consensus_cue(
    seg_i: Segment,
    seg_j: Segment,
    window_keyframes: list[Keyframe],
    visibility_min_fraction: float,
    depth_tolerance: float,
    voxel_size: float,
) -> float:
    if not window_keyframes:
        raise ValueError("window must contain at least one keyframe")
    table = WindowVisibility([seg_i, seg_j], window_keyframes, voxel_size, depth_tolerance)
    return _consensus(table, 0, 1, visibility_min_fraction)


def _consensus(table: WindowVisibility, i: int, j: int, min_fraction: float) -> float:
    fi = table.vis_count[i] / table.sizes[i]
    fj = table.vis_count[j] / table.sizes[j]
    both = (fi >= min_fraction) & (fj >= min_fraction) & (table.vis_count[i] > 0) & (table.vis_count[j] > 0)
    n_vis = int(both.sum())
    if n_vis == 0:
        return 0.0
    mi, mj = table.majority[i], table.majority[j]
    n_supp = int((both & (mi != 0) & (mi == mj)).sum())
    return n_supp / n_vis


def merge_decision(cues: EdgeCues, lambda1: float, lambda2: float, enabled: str = "oxv") -> bool:
    """Merge test ``(O + X > lambda1) or (V > lambda2)``.

    With a reduced cue set the first branch compares the enabled terms against
    ``lambda1`` scaled by the fraction of {O, X} in use, so a single cue must
    exceed ``lambda1 / 2``.
    """
    terms = [v for name, v in (("o", cues.O), ("x", cues.X)) if name in enabled]
    first = bool(terms) and sum(terms) > lambda1 * len(terms) / 2
    second = "v" in enabled and cues.V > lambda2
    return first or second


def candidate_pairs(segments: list[Segment]) -> np.ndarray:
    """Index pairs (i < j) whose voxel bounding boxes touch after 1-voxel dilation."""
    n = len(segments)
    if n < 2:
        return np.zeros((0, 2), dtype=np.int64)
    lo = np.empty((n, 3), dtype=np.int64)
    hi = np.empty((n, 3), dtype=np.int64)
    for i, s in enumerate(segments):
        c = unpack_keys(s.keys)
        lo[i], hi[i] = c.min(axis=0) - 1, c.max(axis=0) + 1
    touch = np.all((lo[:, None, :] <= hi[None, :, :]) & (lo[None, :, :] <= hi[:, None, :]), axis=2)
    ii, jj = np.nonzero(np.triu(touch, k=1))
    return np.stack([ii, jj], axis=1)


def edge_cues(segments: list[Segment], table: WindowVisibility, pairs: np.ndarray, min_fraction: float) -> list[EdgeCues]:
    out = []
    for i, j in pairs:
        si, sj = segments[i], segments[j]
        shared = np.intersect1d(si.keys, sj.keys, assume_unique=True).size
        if shared:
            o = _overlap(
                shared,
                table.containment_count(i, j, si.frame_id),
                table.containment_count(j, i, sj.frame_id),
            )
        else:
            o = 0.0
        out.append(EdgeCues(o, semantic_cue(si.feature, sj.feature), _consensus(table, i, j, min_fraction)))
    return out


def cluster_window(registry: SegmentRegistry, keyframes: list[Keyframe], config: StreamConfig) -> list[LocalInstance]:
    segments = list(registry)
    if not segments:
        raise ValueError("cannot cluster an empty segment registry")
    table = WindowVisibility(segments, keyframes, config.voxel_size, config.tolerance)
    pairs = candidate_pairs(segments)
    cues = edge_cues(segments, table, pairs, config.visibility_min_fraction)
    keep = [merge_decision(c, config.lambda1, config.lambda2, config.cues) for c in cues]
    edges = pairs[np.array(keep, dtype=bool)] if len(pairs) else pairs
    n = len(segments)
    graph = coo_matrix((np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    return _instances_from_labels(segments, labels)


def _instances_from_labels(segments: list[Segment], labels: np.ndarray) -> list[LocalInstance]:
    groups: dict[int, list[int]] = {}
    for idx, lab in enumerate(labels):
        groups.setdefault(int(lab), []).append(idx)
    members_sorted = sorted(
        (sorted(segments[i].seg_id for i in idxs), idxs) for idxs in groups.values()
    )
    by_id = {s.seg_id: s for s in segments}
    out = []
    for n, (seg_ids, _) in enumerate(members_sorted, start=1):
        members = [by_id[s] for s in seg_ids]
        keys = np.unique(np.concatenate([m.keys for m in members]))
        z = np.mean([m.feature for m in members], axis=0)
        norm = np.linalg.norm(z)
        z = z / norm if norm > 1e-12 else members[0].feature.copy()
        out.append(LocalInstance(n, seg_ids, keys, z, len(members)))
    return out
