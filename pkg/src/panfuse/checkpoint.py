"""``map.bin`` checkpoint format for the global map.

    b"PGM1" | voxel_size f32 | D_f u32 | voxel count u64
    voxel count x (ix, iy, iz i32, T u32, K f32, C f32, F D_f x f32)
    b"PGR1" | next_id u32 | version u32 | instance count u32
    instance count x (id u32, N u32, z D_f x f32)

All values little-endian; voxels ascend by packed key, instances by id.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .fusion import GlobalInstance, GlobalMap
from .geometry import pack_keys, unpack_keys
from .grid import AttributeGrid
from .ingestion import SceneFormatError

MAP_MAGIC = b"PGM1"
REGISTRY_MAGIC = b"PGR1"


def _voxel_dtype(dim: int) -> np.dtype:
    return np.dtype(
        [("ix", "<i4"), ("iy", "<i4"), ("iz", "<i4"), ("T", "<u4"), ("K", "<f4"), ("C", "<f4"), ("F", "<f4", (dim,))]
    )


def _instance_dtype(dim: int) -> np.dtype:
    return np.dtype([("id", "<u4"), ("N", "<u4"), ("z", "<f4", (dim,))])


def map_to_bytes(gmap: GlobalMap) -> bytes:
    grid = gmap.grid
    n = len(grid)
    recs = np.zeros(n, dtype=_voxel_dtype(gmap.dim))
    coords = unpack_keys(grid.keys)
    recs["ix"], recs["iy"], recs["iz"] = coords[:, 0], coords[:, 1], coords[:, 2]
    recs["T"] = grid.label
    recs["K"] = grid.weight
    recs["C"] = grid.conf
    recs["F"] = grid.features()
    ids = gmap.instance_ids
    inst = np.zeros(len(ids), dtype=_instance_dtype(gmap.dim))
    for i, gid in enumerate(ids):
        entry = gmap.registry[gid]
        inst[i]["id"] = gid
        inst[i]["N"] = entry.N
        inst[i]["z"] = entry.feature
    return b"".join(
        [
            MAP_MAGIC,
            struct.pack("<fIQ", gmap.voxel_size, gmap.dim, n),
            recs.tobytes(),
            REGISTRY_MAGIC,
            struct.pack("<III", gmap.next_id, gmap.version, len(ids)),
            inst.tobytes(),
        ]
    )


def save_map(path, gmap: GlobalMap):
    Path(path).write_bytes(map_to_bytes(gmap))


def load_map(path) -> GlobalMap:
    path = Path(path)
    if not path.exists():
        raise SceneFormatError(path, "missing map checkpoint")
    data = path.read_bytes()
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(data):
            raise SceneFormatError(path, f"truncated while reading {what}", pos)
        out = data[pos : pos + n]
        pos += n
        return out

    if take(4, "magic") != MAP_MAGIC:
        raise SceneFormatError(path, f"bad magic, expected {MAP_MAGIC!r}", 0)
    vs32, dim, n = struct.unpack("<fIQ", take(16, "header"))
    # shortest float32 repr recovers the configured decimal (0.03, not 0.0299999993)
    voxel_size = float(str(np.float32(vs32)))
    vdt = _voxel_dtype(dim)
    recs = np.frombuffer(take(n * vdt.itemsize, f"{n} voxel records"), dtype=vdt)
    if take(4, "registry magic") != REGISTRY_MAGIC:
        raise SceneFormatError(path, f"bad registry magic, expected {REGISTRY_MAGIC!r}", pos - 4)
    next_id, version, count = struct.unpack("<III", take(12, "registry header"))
    idt = _instance_dtype(dim)
    inst = np.frombuffer(take(count * idt.itemsize, f"{count} instance records"), dtype=idt)
    if pos != len(data):
        raise SceneFormatError(path, f"{len(data) - pos} trailing bytes", pos)

    grid = AttributeGrid(dim)
    keys = pack_keys(np.stack([recs["ix"], recs["iy"], recs["iz"]], axis=1).astype(np.int64))
    order = np.argsort(keys, kind="stable")
    recs = recs[order]
    grid.keys = keys[order]
    grid.conf = recs["C"].astype(np.float64)
    grid.fc = recs["F"].astype(np.float64) * grid.conf[:, None]
    grid.label = recs["T"].astype(np.int64)
    grid.weight = recs["K"].astype(np.float64)
    gmap = GlobalMap(voxel_size, dim, grid, next_id=next_id, version=version)
    for rec in inst:
        gmap.registry[int(rec["id"])] = GlobalInstance(np.zeros(0, np.int64), rec["z"].astype(np.float64), int(rec["N"]))
    gmap.rebuild_voxel_sets()
    return gmap
