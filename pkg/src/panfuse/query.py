"""Open-vocabulary queries over a fused map and projection onto ground-truth points."""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .fusion import GlobalMap
from .geometry import pack_keys, voxel_centers, voxelize_points
from .labels import LabelSet


def semantic_labels(gmap: GlobalMap, labels: LabelSet) -> np.ndarray:
    """Class id per grid voxel (aligned with ``gmap.grid.keys``); 0 where C = 0.

    Each voxel takes the class whose embedding has the highest cosine with F;
    equal scores resolve to the smaller class id.
    """
    if len(labels) == 0:
        raise ValueError("label set is empty")
    ids, emb = labels.embedding_matrix()
    if emb.shape[1] != gmap.dim:
        raise ValueError(f"label embeddings have dimension {emb.shape[1]}, map has {gmap.dim}")
    out = np.zeros(len(gmap.grid), dtype=np.int64)
    has = gmap.grid.conf > 0
    if not has.any():
        return out
    f = gmap.grid.features(np.flatnonzero(has))
    norms = np.linalg.norm(f, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    scores = (f / norms) @ emb.T
    out[has] = ids[np.argmax(scores, axis=1)]
    return out


def semantic_label_dict(gmap: GlobalMap, labels: LabelSet) -> dict[tuple[int, int, int], int]:
    from .geometry import unpack_keys

    cls = semantic_labels(gmap, labels)
    return {tuple(int(c) for c in k): int(v) for k, v in zip(unpack_keys(gmap.grid.keys), cls)}


def instance_query(gmap: GlobalMap, text_embedding, top_k: int | None = None, min_score: float = -np.inf):
    """Instances ranked by cosine(z_g, text_embedding), best first, ties by smaller id."""
    e = np.asarray(text_embedding, dtype=np.float64).reshape(-1)
    if e.size != gmap.dim:
        raise ValueError(f"query embedding has dimension {e.size}, map has {gmap.dim}")
    n = np.linalg.norm(e)
    if abs(n - 1.0) > 1e-3:
        raise ValueError(f"query embedding must be unit-norm, got norm {n:.4f}")
    results = []
    for gid in gmap.instance_ids:
        z = gmap.registry[gid].feature
        score = float(np.dot(z, e) / (np.linalg.norm(z) * n))
        if score >= min_score:
            results.append((gid, score))
    results.sort(key=lambda t: (-t[1], t[0]))
    return results[:top_k] if top_k is not None else results


def project_to_gt(gmap: GlobalMap, gt_points: np.ndarray, labels: LabelSet, radius: float | None = None):
    """Predicted (class, instance) per GT point.

    A point takes its containing voxel's prediction; otherwise the nearest
    occupied voxel center within ``radius`` (default 2 voxels); otherwise (0, 0).
    """
    pts = np.asarray(gt_points, dtype=np.float64).reshape(-1, 3)
    radius = 2.0 * gmap.voxel_size if radius is None else radius
    grid = gmap.grid
    cls_vox = semantic_labels(gmap, labels)
    occupied = (grid.conf > 0) | (grid.label != 0)
    pred_cls = np.zeros(len(pts), dtype=np.int64)
    pred_inst = np.zeros(len(pts), dtype=np.int64)
    if not occupied.any() or len(pts) == 0:
        return pred_cls, pred_inst
    rows = grid.rows(pack_keys(voxelize_points(pts, gmap.voxel_size)))
    direct = rows >= 0
    direct[direct] = occupied[rows[direct]]
    pred_cls[direct] = cls_vox[rows[direct]]
    pred_inst[direct] = grid.label[rows[direct]]
    rest = np.flatnonzero(~direct)
    if len(rest):
        occ_rows = np.flatnonzero(occupied)
        tree = cKDTree(voxel_centers(grid.keys[occ_rows], gmap.voxel_size))
        dist, nn = tree.query(pts[rest], k=1, distance_upper_bound=radius)
        ok = np.isfinite(dist)
        hit = occ_rows[nn[ok]]
        pred_cls[rest[ok]] = cls_vox[hit]
        pred_inst[rest[ok]] = grid.label[hit]
    return pred_cls, pred_inst


def instance_classes(gmap: GlobalMap, labels: LabelSet) -> dict[int, int]:
    """Best-matching class per global instance feature."""
    ids, emb = labels.embedding_matrix()
    out = {}
    for gid in gmap.instance_ids:
        z = gmap.registry[gid].feature
        out[gid] = int(ids[int(np.argmax(emb @ (z / np.linalg.norm(z))))])
    return out


def count_thing_instances(gmap: GlobalMap, labels: LabelSet) -> int:
    things = set(labels.thing_ids)
    return sum(1 for c in instance_classes(gmap, labels).values() if c in things)
