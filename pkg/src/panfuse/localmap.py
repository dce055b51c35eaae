"""Per-window spatial attribute grids built from clustered instances."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .cluster import LocalInstance
from .geometry import back_project_depth, pack_keys, voxelize_points
from .grid import AttributeGrid
from .ingestion import Keyframe

log = logging.getLogger(__name__)


@dataclass(eq=False)
class LocalMap:
    grid: AttributeGrid
    instances: list[LocalInstance]
    window_id: int = 0
    # voxels hit by any valid-depth pixel of the window
    observed_keys: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    frame_ids: list[int] = field(default_factory=list)

    def instance(self, instance_id: int) -> LocalInstance:
        for inst in self.instances:
            if inst.instance_id == instance_id:
                return inst
        raise KeyError(instance_id)


def build_label_grid(instances: list[LocalInstance], dim: int) -> AttributeGrid:
    """Write T = instance id and K = N for every instance voxel.

    A voxel claimed by several instances goes to the larger N, then the smaller id.
    """
    grid = AttributeGrid(dim)
    if not instances:
        return grid
    keys = np.concatenate([inst.keys for inst in instances])
    ids = np.concatenate([np.full(len(inst.keys), inst.instance_id) for inst in instances])
    ns = np.concatenate([np.full(len(inst.keys), inst.N) for inst in instances])
    # winner per key: sort by key, then N descending, then id ascending
    order = np.lexsort((ids, -ns, keys))
    keys, ids, ns = keys[order], ids[order], ns[order]
    first = np.concatenate([[True], keys[1:] != keys[:-1]])
    rows = grid.ensure(keys[first])
    grid.label[rows] = ids[first]
    grid.weight[rows] = ns[first]
    return grid


def _accumulate(grid: AttributeGrid, kf: Keyframe, voxel_size: float, all_voxels: bool):
    pts, idx = back_project_depth(kf.intrinsics, kf.pose, kf.depth)
    c = kf.confidence.reshape(-1)[idx].astype(np.float64)
    use = c > 0
    if not kf.per_pixel:
        use &= kf.mask.reshape(-1)[idx] != 0
    if not use.any():
        return
    pts, idx, c = pts[use], idx[use], c[use]
    keys = pack_keys(voxelize_points(pts, voxel_size))
    feats = kf.pixel_features(idx)
    if all_voxels:
        grid.ensure(np.unique(keys))
        rows = grid.rows(keys)
    else:
        rows = grid.rows(keys)
        keep = rows >= 0
        rows, c, feats = rows[keep], c[keep], feats[keep]
    np.add.at(grid.conf, rows, c)
    np.add.at(grid.fc, rows, c[:, None] * feats)


def fuse_window_features(
    keyframes: list[Keyframe], grid: AttributeGrid, voxel_size: float, all_voxels: bool = True
) -> AttributeGrid:
    """Confidence-weighted multi-view feature fusion into ``grid`` (in place, returned).

    With ``all_voxels`` false only voxels already present in the grid receive features.
    """
    for kf in keyframes:
        _accumulate(grid, kf, voxel_size, all_voxels)
    return grid


def observed_region(keyframes: list[Keyframe], voxel_size: float) -> np.ndarray:
    parts = []
    for kf in keyframes:
        pts, _ = back_project_depth(kf.intrinsics, kf.pose, kf.depth)
        parts.append(pack_keys(voxelize_points(pts, voxel_size)))
    if not parts:
        return np.zeros(0, dtype=np.int64)
    return np.unique(np.concatenate(parts))


def build_local_map(
    keyframes: list[Keyframe],
    instances: list[LocalInstance],
    voxel_size: float,
    dim: int,
    window_id: int = 0,
    fuse_all_features: bool = True,
) -> LocalMap:
    grid = build_label_grid(instances, dim)
    # trim instance voxel sets to the voxels each one won
    kept = []
    for inst in instances:
        rows = grid.rows(inst.keys)
        owned = inst.keys[grid.label[rows] == inst.instance_id]
        if len(owned) == 0:
            log.debug("window %d: instance %d lost all voxels to overlaps", window_id, inst.instance_id)
            continue
        inst.keys = owned
        kept.append(inst)
    fuse_window_features(keyframes, grid, voxel_size, all_voxels=fuse_all_features)
    return LocalMap(
        grid=grid,
        instances=kept,
        window_id=window_id,
        observed_keys=observed_region(keyframes, voxel_size),
        frame_ids=[kf.frame_id for kf in keyframes],
    )
