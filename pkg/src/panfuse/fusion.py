"""Local-to-global fusion: bidirectional matching and per-voxel label/feature updates."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .geometry import dilate_keys
from .grid import AttributeGrid
from .hungarian import hungarian
from .localmap import LocalMap

log = logging.getLogger(__name__)


class FusionError(RuntimeError):
    pass


@dataclass(eq=False)
class GlobalInstance:
    keys: np.ndarray
    feature: np.ndarray
    N: int


@dataclass(eq=False)
class GlobalMap:
    voxel_size: float
    dim: int
    grid: AttributeGrid = None
    registry: dict[int, GlobalInstance] = field(default_factory=dict)
    next_id: int = 1
    version: int = 0

    def __post_init__(self):
        if self.grid is None:
            self.grid = AttributeGrid(self.dim)

    @property
    def instance_ids(self) -> list[int]:
        return sorted(self.registry)

    def __len__(self):
        return len(self.registry)

    def rebuild_voxel_sets(self):
        """Recompute registry voxel sets from grid labels; drop instances left empty."""
        labels = self.grid.label
        order = np.argsort(labels, kind="stable")
        sorted_labels = labels[order]
        for gid in list(self.registry):
            lo, hi = np.searchsorted(sorted_labels, [gid, gid + 1])
            keys = np.sort(self.grid.keys[order[lo:hi]])
            if len(keys) == 0:
                del self.registry[gid]
            else:
                self.registry[gid].keys = keys

    def audit(self):
        """Raise FusionError unless registry voxel sets match grid labels and are disjoint."""
        seen = np.zeros(0, dtype=np.int64)
        for gid in self.instance_ids:
            keys = self.registry[gid].keys
            rows = self.grid.rows(keys)
            if np.any(rows < 0) or np.any(self.grid.label[rows] != gid):
                raise FusionError(f"instance {gid}: registry voxels disagree with grid labels")
            if np.intersect1d(seen, keys).size:
                raise FusionError(f"instance {gid}: voxel set overlaps another instance")
            seen = np.union1d(seen, keys)
        labeled = self.grid.label != 0
        unknown = set(np.unique(self.grid.label[labeled]).tolist()) - set(self.registry)
        if unknown:
            raise FusionError(f"grid carries labels without registry entries: {sorted(unknown)[:5]}")
        if np.any(self.grid.weight < 0):
            raise FusionError("negative instance weight in grid")


@dataclass
class ScoreMatrix:
    values: np.ndarray
    row_ids: list[int]
    col_ids: list[int]

    @property
    def shape(self):
        return self.values.shape


@dataclass
class MatchSet:
    pairs: set[tuple[int, int]] = field(default_factory=set)
    one_to_one: bool = True

    def __post_init__(self):
        self.pairs = set(self.pairs)
        if self.one_to_one:
            ls = [l for l, _ in self.pairs]
            gs = [g for _, g in self.pairs]
            if len(set(ls)) != len(ls) or len(set(gs)) != len(gs):
                raise ValueError("match set is not one-to-one")

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(sorted(self.pairs))

    def as_dict(self) -> dict[int, int]:
        return {l: g for l, g in sorted(self.pairs)}


def _cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    na = np.linalg.norm(a, axis=1, keepdims=True)
    nb = np.linalg.norm(b, axis=1, keepdims=True)
    na[na == 0] = 1.0
    nb[nb == 0] = 1.0
    return (a / na) @ (b / nb).T


def _intersections(local: LocalMap, global_map: GlobalMap) -> np.ndarray:
    gids = global_map.instance_ids
    out = np.zeros((len(local.instances), len(gids)), dtype=np.int64)
    if not gids or not local.instances:
        return out
    # label every global voxel with its column, then count per local instance
    col_of = {gid: c for c, gid in enumerate(gids)}
    for r, inst in enumerate(local.instances):
        rows = global_map.grid.rows(inst.keys)
        labs = global_map.grid.label[rows[rows >= 0]]
        labs = labs[labs != 0]
        for gid, cnt in zip(*np.unique(labs, return_counts=True)):
            c = col_of.get(int(gid))
            if c is not None:
                out[r, c] = cnt
    return out


def _features(local: LocalMap, global_map: GlobalMap):
    zl = np.stack([inst.feature for inst in local.instances]) if local.instances else np.zeros((0, global_map.dim))
    gids = global_map.instance_ids
    zg = np.stack([global_map.registry[g].feature for g in gids]) if gids else np.zeros((0, global_map.dim))
    return zl, zg


def forward_scores(local: LocalMap, global_map: GlobalMap) -> ScoreMatrix:
    """Local-to-global scores: cosine plus overlap over the global voxels inside the observed region."""
    zl, zg = _features(local, global_map)
    inter = _intersections(local, global_map)
    region = dilate_keys(local.observed_keys)
    gids = global_map.instance_ids
    cont = np.array(
        [np.intersect1d(global_map.registry[g].keys, region, assume_unique=True).size for g in gids], dtype=float
    )
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(cont[None, :] > 0, inter / np.where(cont > 0, cont, 1.0)[None, :], 0.0)
    vals = _cosine(zl, zg) + np.clip(term, 0.0, 1.0) if len(zl) and len(zg) else np.zeros(inter.shape)
    return ScoreMatrix(vals, [i.instance_id for i in local.instances], gids)


def backward_scores(local: LocalMap, global_map: GlobalMap) -> ScoreMatrix:
    """Global-to-local scores: cosine plus overlap over the full local instance."""
    zl, zg = _features(local, global_map)
    inter = _intersections(local, global_map).T
    sizes = np.array([len(i.keys) for i in local.instances], dtype=float)
    term = np.where(sizes[None, :] > 0, inter / np.where(sizes > 0, sizes, 1.0)[None, :], 0.0)
    vals = _cosine(zg, zl) + term if len(zl) and len(zg) else np.zeros(inter.shape)
    return ScoreMatrix(vals, global_map.instance_ids, [i.instance_id for i in local.instances])


def _threshold(n_l: int, n_g: int) -> float:
    return 1.0 / min(n_l, n_g)


def bidirectional_match(fwd: ScoreMatrix, bwd: ScoreMatrix) -> MatchSet:
    """Pairs chosen by both the forward and the transposed backward assignment.

    Pairs whose forward score falls below 1 / min(n_l, n_g) are dropped.
    """
    n_l, n_g = fwd.shape
    if bwd.shape != (n_g, n_l):
        raise ValueError(f"backward matrix shape {bwd.shape} incompatible with forward {fwd.shape}")
    if n_l == 0 or n_g == 0:
        return MatchSet()
    a_fwd = set(hungarian(fwd.values))
    a_bwd = {(l, g) for g, l in hungarian(bwd.values)}
    thr = _threshold(n_l, n_g)
    pairs = {(fwd.row_ids[l], fwd.col_ids[g]) for l, g in a_fwd & a_bwd if fwd.values[l, g] >= thr}
    return MatchSet(pairs)


def forward_match(fwd: ScoreMatrix) -> MatchSet:
    n_l, n_g = fwd.shape
    if n_l == 0 or n_g == 0:
        return MatchSet()
    thr = _threshold(n_l, n_g)
    return MatchSet({(fwd.row_ids[l], fwd.col_ids[g]) for l, g in hungarian(fwd.values) if fwd.values[l, g] >= thr})


def backward_match(bwd: ScoreMatrix) -> MatchSet:
    n_g, n_l = bwd.shape
    if n_l == 0 or n_g == 0:
        return MatchSet()
    thr = _threshold(n_l, n_g)
    return MatchSet({(bwd.col_ids[l], bwd.row_ids[g]) for g, l in hungarian(bwd.values) if bwd.values[g, l] >= thr})


def nearest_neighbor_match(fwd: ScoreMatrix) -> MatchSet:
    """Each local instance takes its best-scoring global instance; may be many-to-one."""
    n_l, n_g = fwd.shape
    if n_l == 0 or n_g == 0:
        return MatchSet()
    thr = _threshold(n_l, n_g)
    best = np.argmax(fwd.values, axis=1)
    pairs = {(fwd.row_ids[l], fwd.col_ids[g]) for l, g in enumerate(best) if fwd.values[l, g] >= thr}
    return MatchSet(pairs, one_to_one=False)


def match(local: LocalMap, global_map: GlobalMap, mode: str = "bidirectional") -> MatchSet:
    if not local.instances or not global_map.registry:
        return MatchSet()
    fwd = forward_scores(local, global_map)
    if mode == "bidirectional":
        return bidirectional_match(fwd, backward_scores(local, global_map))
    if mode == "forward":
        return forward_match(fwd)
    if mode == "backward":
        return backward_match(backward_scores(local, global_map))
    if mode == "nn":
        return nearest_neighbor_match(fwd)
    raise ValueError(f"unknown matching mode {mode!r}")


def update_global(local: LocalMap, global_map: GlobalMap, matches: MatchSet | Iterable[tuple[int, int]]) -> GlobalMap:
    """Fuse ``local`` into ``global_map`` in place and bump its version."""
    if not isinstance(matches, MatchSet):
        matches = MatchSet(matches)
    local_ids = {inst.instance_id for inst in local.instances}
    pairs = sorted(matches.pairs)
    for l, g in pairs:
        if l not in local_ids or g not in global_map.registry:
            raise FusionError(f"match ({l}, {g}) references an unknown instance")
    matched: dict[int, int] = {}
    for l, g in pairs:
        matched.setdefault(l, g)
    id_map = dict(matched)
    for inst in local.instances:
        if inst.instance_id not in id_map:
            id_map[inst.instance_id] = global_map.next_id
            global_map.next_id += 1

    g = global_map.grid
    lg = local.grid
    rows = g.ensure(lg.keys)

    # features and confidence: weighted running mean held as premultiplied sums
    g.fc[rows] += lg.fc
    g.conf[rows] += lg.conf

    # labels and weights
    has = lg.label != 0
    r = rows[has]
    t_l = lg.label[has]
    k_l = lg.weight[has]
    lut = np.zeros(int(t_l.max()) + 1 if len(t_l) else 1, dtype=np.int64)
    is_matched = np.zeros_like(lut, dtype=bool)
    for l, gid in id_map.items():
        if l < len(lut):
            lut[l] = gid
            is_matched[l] = l in matched
    target = lut[t_l]
    m = is_matched[t_l]
    t_g = g.label[r]
    k_g = g.weight[r]

    same = m & (t_g == target)
    empty = m & (t_g == 0)
    rest = ~(same | empty)
    keep = rest & (k_l <= k_g)
    replace = rest & (k_l > k_g)

    new_t = t_g.copy()
    new_k = k_g.copy()
    new_k[same] = k_g[same] + k_l[same]
    new_t[empty] = target[empty]
    new_k[empty] = k_l[empty]
    new_k[keep] = k_g[keep] - k_l[keep]
    new_t[replace] = target[replace]
    new_k[replace] = k_l[replace] - k_g[replace]
    g.label[r] = new_t
    g.weight[r] = new_k

    # registry
    for inst in local.instances:
        gid = id_map[inst.instance_id]
        entry = global_map.registry.get(gid)
        if entry is None:
            global_map.registry[gid] = GlobalInstance(inst.keys.copy(), inst.feature.copy(), int(inst.N))
        else:
            z = entry.N * entry.feature + inst.N * inst.feature
            n = np.linalg.norm(z)
            entry.feature = z / n if n > 1e-12 else entry.feature
            entry.N += int(inst.N)
    global_map.rebuild_voxel_sets()
    global_map.version += 1
    return global_map
