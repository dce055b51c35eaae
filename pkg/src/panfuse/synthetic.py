"""Synthetic box-world scenes with controllable 2D mask noise.

Rooms are a floor plus a configurable set of walls (stuff); objects are
axis-aligned boxes (things). Depth comes from exact ray casting, masks from the
ground-truth instance map, then corrupted by the requested noise.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import CameraIntrinsics, Pose, back_project_depth, look_at, pack_keys, voxelize_points
from .ingestion import GroundTruth, Keyframe, write_gt, write_intrinsics, write_keyframe, write_labels
from .labels import ClassInfo, LabelSet

log = logging.getLogger(__name__)

FLOOR = "floor"
WALL = "wall"
_WALL_SIDES = ("-x", "+x", "-y", "+y")
# split parts beyond the first get ids PART_STRIDE * instance + part
PART_STRIDE = 1000
LLOYD_STEPS = 3


@dataclass(frozen=True)
class SceneObject:
    label: str
    extents: tuple[float, float, float]
    center: tuple[float, float, float]

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.center, float) - 0.5 * np.asarray(self.extents, float)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.center, float) + 0.5 * np.asarray(self.extents, float)


@dataclass
class SyntheticSpec:
    room_min: tuple[float, float, float]
    room_max: tuple[float, float, float]
    objects: list[SceneObject]
    trajectory: list[Pose]
    intrinsics: CameraIntrinsics
    walls: tuple[str, ...] = ("-x", "+y")
    feature_dim: int = 16
    over_segmentation_k: int = 1
    id_flicker_prob: float = 0.0
    boundary_noise_px: int = 0
    feature_noise_sigma: float = 0.0
    per_pixel_features: bool = False

    def __post_init__(self):
        lo, hi = np.asarray(self.room_min, float), np.asarray(self.room_max, float)
        if not np.all(hi > lo):
            raise ValueError("room_max must exceed room_min on every axis")
        for obj in self.objects:
            if obj.label in (FLOOR, WALL):
                raise ValueError(f"object label {obj.label!r} is reserved for stuff surfaces")
            if np.any(np.asarray(obj.extents) <= 0):
                raise ValueError(f"object {obj.label!r} has non-positive extents")
            if np.any(obj.lo < lo - 1e-9) or np.any(obj.hi > hi + 1e-9):
                raise ValueError(f"object {obj.label!r} does not lie within the room extents")
        for side in self.walls:
            if side not in _WALL_SIDES:
                raise ValueError(f"unknown wall side {side!r}; expected one of {_WALL_SIDES}")
        if self.over_segmentation_k < 1:
            raise ValueError("over_segmentation_k must be >= 1")
        if not 0.0 <= self.id_flicker_prob <= 1.0:
            raise ValueError("id_flicker_prob must lie in [0, 1]")
        if self.boundary_noise_px < 0:
            raise ValueError("boundary_noise_px must be >= 0")
        if self.feature_noise_sigma < 0:
            raise ValueError("feature_noise_sigma must be >= 0")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")

    # -- classes and instances ------------------------------------------------

    def class_names(self) -> list[tuple[str, bool]]:
        out = [(FLOOR, False)]
        if self.walls:
            out.append((WALL, False))
        for obj in self.objects:
            if (obj.label, True) not in out:
                out.append((obj.label, True))
        return out

    def class_ids(self) -> dict[str, int]:
        return {name: i + 1 for i, (name, _) in enumerate(self.class_names())}

    def instance_classes(self) -> dict[int, int]:
        """GT instance id -> class id (floor, walls in order, then objects)."""
        cids = self.class_ids()
        out = {1: cids[FLOOR]}
        for i, _ in enumerate(self.walls):
            out[2 + i] = cids[WALL]
        base = 2 + len(self.walls)
        for j, obj in enumerate(self.objects):
            out[base + j] = cids[obj.label]
        return out

    def class_embeddings(self) -> dict[int, np.ndarray]:
        """Fixed unit embedding per class: one-hot when the dimension allows it."""
        n = len(self.class_names())
        out = {}
        if n <= self.feature_dim:
            for cid in range(1, n + 1):
                e = np.zeros(self.feature_dim)
                e[cid - 1] = 1.0
                out[cid] = e
        else:
            rng = np.random.default_rng(12345)
            for cid in range(1, n + 1):
                e = rng.standard_normal(self.feature_dim)
                out[cid] = e / np.linalg.norm(e)
        return out

    def label_set(self) -> LabelSet:
        emb = self.class_embeddings()
        return LabelSet(
            {
                cid: ClassInfo(name, thing, emb[cid])
                for cid, (name, thing) in zip(range(1, 100000), self.class_names())
            }
        )

    # -- (de)serialization ----------------------------------------------------

    @classmethod
    def from_dict(cls, d: dict) -> SyntheticSpec:
        known = {
            "room", "objects", "trajectory", "camera", "walls", "feature_dim", "noise", "per_pixel_features",
        }
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown spec fields: {sorted(unknown)}")
        for key in ("room", "objects", "trajectory", "camera"):
            if key not in d:
                raise ValueError(f"spec is missing required field {key!r}")
        room = d["room"]
        cam = d["camera"]
        intr = CameraIntrinsics(
            float(cam["fx"]), float(cam["fy"]), float(cam["cx"]), float(cam["cy"]), int(cam["width"]), int(cam["height"])
        )
        objects = [
            SceneObject(o["label"], tuple(float(x) for x in o["extents"]), tuple(float(x) for x in o["center"]))
            for o in d["objects"]
        ]
        noise = d.get("noise", {})
        bad = set(noise) - {"over_segmentation_k", "id_flicker_prob", "boundary_noise_px", "feature_noise_sigma"}
        if bad:
            raise ValueError(f"unknown noise fields: {sorted(bad)}")
        return cls(
            room_min=tuple(float(x) for x in room["min"]),
            room_max=tuple(float(x) for x in room["max"]),
            objects=objects,
            trajectory=_trajectory_from_dict(d["trajectory"]),
            intrinsics=intr,
            walls=tuple(d.get("walls", ("-x", "+y"))),
            feature_dim=int(d.get("feature_dim", 16)),
            over_segmentation_k=int(noise.get("over_segmentation_k", 1)),
            id_flicker_prob=float(noise.get("id_flicker_prob", 0.0)),
            boundary_noise_px=int(noise.get("boundary_noise_px", 0)),
            feature_noise_sigma=float(noise.get("feature_noise_sigma", 0.0)),
            per_pixel_features=bool(d.get("per_pixel_features", False)),
        )

    @classmethod
    def from_json(cls, path) -> SyntheticSpec:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def with_noise(self, **noise) -> SyntheticSpec:
        return dataclasses.replace(self, **noise)


def _trajectory_from_dict(t) -> list[Pose]:
    if isinstance(t, list):
        return [Pose.from_matrix(np.asarray(m, float)) for m in t]
    if "orbit" in t:
        o = t["orbit"]
        return orbit_trajectory(
            center=o["center"],
            radius=float(o["radius"]),
            height=float(o["height"]),
            n_frames=int(o["frames"]),
            target=o.get("target", o["center"]),
            start_deg=float(o.get("start_deg", 0.0)),
            sweep_deg=float(o.get("sweep_deg", 360.0)),
        )
    if "poses" in t:
        return [Pose.from_matrix(np.asarray(m, float)) for m in t["poses"]]
    raise ValueError("trajectory must be a pose list or {'orbit': {...}}")


def orbit_trajectory(center, radius, height, n_frames, target=None, start_deg=0.0, sweep_deg=360.0) -> list[Pose]:
    """Camera positions on a horizontal circle, all looking at ``target``."""
    center = np.asarray(center, float)
    target = center if target is None else np.asarray(target, float)
    poses = []
    for i in range(n_frames):
        a = np.deg2rad(start_deg + sweep_deg * i / n_frames)
        eye = np.array([center[0] + radius * np.cos(a), center[1] + radius * np.sin(a), height])
        poses.append(look_at(eye, target))
    return poses


# -- ray casting -----------------------------------------------------------------


def _pixel_rays(intr: CameraIntrinsics, pose: Pose) -> np.ndarray:
    h, w = intr.shape
    vs, us = np.mgrid[0:h, 0:w]
    d_cam = np.stack(
        [(us.ravel() - intr.cx) / intr.fx, (vs.ravel() - intr.cy) / intr.fy, np.ones(h * w)], axis=1
    )
    return d_cam @ pose.rotation.T


def _hit_rect(origin, dirs, axis, coord, lo, hi):
    """Ray parameter for hits on the axis-aligned rectangle {x_axis = coord} within [lo, hi]."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (coord - origin[axis]) / dirs[:, axis]
    t = np.where(np.isfinite(t) & (t > 1e-9), t, np.inf)
    p = origin + np.where(np.isfinite(t), t, 0.0)[:, None] * dirs
    for a in range(3):
        if a == axis:
            continue
        t = np.where((p[:, a] >= lo[a]) & (p[:, a] <= hi[a]), t, np.inf)
    return t


def _hit_box(origin, dirs, lo, hi):
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t1 = (lo - origin) * inv
        t2 = (hi - origin) * inv
    tn = np.nanmax(np.minimum(t1, t2), axis=1)
    tf = np.nanmin(np.maximum(t1, t2), axis=1)
    hit = (tf >= tn) & (tn > 1e-9)
    return np.where(hit, tn, np.inf)


def _surfaces(spec: SyntheticSpec):
    lo, hi = np.asarray(spec.room_min, float), np.asarray(spec.room_max, float)
    out = [("rect", 2, lo[2], lo, hi)]
    for side in spec.walls:
        axis = "xyz".index(side[1])
        coord = lo[axis] if side[0] == "-" else hi[axis]
        out.append(("rect", axis, coord, lo, hi))
    for obj in spec.objects:
        out.append(("box", None, None, obj.lo, obj.hi))
    return out


def render_gt(spec: SyntheticSpec, pose: Pose):
    """Depth (float32, H x W) and GT instance map (H x W, 0 = nothing hit)."""
    intr = spec.intrinsics
    dirs = _pixel_rays(intr, pose)
    origin = pose.translation
    best = np.full(len(dirs), np.inf)
    inst = np.zeros(len(dirs), dtype=np.int64)
    for k, (kind, axis, coord, lo, hi) in enumerate(_surfaces(spec), start=1):
        t = _hit_rect(origin, dirs, axis, coord, lo, hi) if kind == "rect" else _hit_box(origin, dirs, lo, hi)
        closer = t < best
        best[closer] = t[closer]
        inst[closer] = k
    depth = np.where(np.isfinite(best), best, 0.0).astype(np.float32)
    return depth.reshape(intr.shape), inst.reshape(intr.shape)


# -- mask corruption -----------------------------------------------------------------


def _split_parts(pix: np.ndarray, width: int, k: int, rng) -> list[np.ndarray]:
    """Split a pixel set into min(k, |pix|) nonempty nearest-seed parts."""
    k = min(k, len(pix))
    if k <= 1:
        return [pix]
    uv = np.stack([pix % width, pix // width], axis=1).astype(np.float64)
    centers = uv[rng.choice(len(pix), size=k, replace=False)]
    # a few Lloyd steps from random seeds: random but comparably sized parts
    for it in range(LLOYD_STEPS + 1):
        owner = np.argmin(((uv[:, None, :] - centers[None, :, :]) ** 2).sum(-1), axis=1)
        if it == LLOYD_STEPS or np.bincount(owner, minlength=k).min() == 0:
            break
        centers = np.stack([uv[owner == j].mean(axis=0) for j in range(k)])
    if np.bincount(owner, minlength=k).min() == 0:
        # degenerate relaxation: fall back to seed pixels owning themselves
        owner = np.argmin(((uv[:, None, :] - centers[None, :, :]) ** 2).sum(-1), axis=1)
    return [pix[owner == j] for j in range(k) if np.any(owner == j)]


def _noisy_mask(spec: SyntheticSpec, gt_inst: np.ndarray, depth: np.ndarray, rng) -> np.ndarray:
    h, w = gt_inst.shape
    flat = gt_inst.reshape(-1)
    classes = spec.instance_classes()
    thing_classes = {cid for name, cid in spec.class_ids().items() if (name, True) in spec.class_names()}
    mask = flat.astype(np.uint32).copy()
    if spec.over_segmentation_k > 1:
        for g in np.unique(flat):
            if g == 0 or classes[int(g)] not in thing_classes:
                continue
            parts = _split_parts(np.flatnonzero(flat == g), w, spec.over_segmentation_k, rng)
            for j, part in enumerate(parts[1:], start=1):
                mask[part] = PART_STRIDE * int(g) + j
    if spec.id_flicker_prob > 0 and rng.random() < spec.id_flicker_prob:
        ids = np.unique(mask[mask > 0])
        fresh = rng.choice(np.arange(1, 1 << 16), size=len(ids), replace=False)
        remap = dict(zip(ids.tolist(), fresh.tolist()))
        mask = np.array([remap.get(int(m), 0) for m in mask], dtype=np.uint32)
    if spec.boundary_noise_px > 0:
        b = spec.boundary_noise_px
        m2 = mask.reshape(h, w)
        vv, uu = np.mgrid[0:h, 0:w]
        dv = rng.integers(-b, b + 1, size=(h, w))
        du = rng.integers(-b, b + 1, size=(h, w))
        mask = m2[np.clip(vv + dv, 0, h - 1), np.clip(uu + du, 0, w - 1)].reshape(-1)
    mask[depth.reshape(-1) <= 0] = 0
    return mask.reshape(h, w)


def _confidence(mask: np.ndarray, depth: np.ndarray) -> np.ndarray:
    conf = np.ones(mask.shape, dtype=np.float32)
    edge = np.zeros(mask.shape, dtype=bool)
    edge[:, 1:] |= mask[:, 1:] != mask[:, :-1]
    edge[:, :-1] |= mask[:, 1:] != mask[:, :-1]
    edge[1:, :] |= mask[1:, :] != mask[:-1, :]
    edge[:-1, :] |= mask[1:, :] != mask[:-1, :]
    conf[edge] = 0.5
    conf[(depth <= 0) | (mask == 0)] = 0.0
    return conf


# -- scene generation -----------------------------------------------------------------


@dataclass
class SyntheticScene:
    spec: SyntheticSpec
    keyframes: list[Keyframe]
    gt_instance_maps: list[np.ndarray]
    gt: GroundTruth
    labels: LabelSet
    instance_classes: dict[int, int] = field(default_factory=dict)

    def gt_class_map(self, i: int) -> np.ndarray:
        lut = np.zeros(max(self.instance_classes) + 1, dtype=np.int64)
        for g, c in self.instance_classes.items():
            lut[g] = c
        return lut[self.gt_instance_maps[i]]

    def thing_instances(self) -> list[int]:
        things = set(self.labels.thing_ids)
        return sorted(g for g, c in self.instance_classes.items() if c in things)


def generate_synthetic(spec: SyntheticSpec, seed: int, out_dir=None, gt_resolution: float = 0.01) -> SyntheticScene:
    """Render, corrupt, and optionally write a synthetic scene; deterministic in (spec, seed)."""
    intr = spec.intrinsics
    classes = spec.instance_classes()
    emb = spec.class_embeddings()
    lo, hi = np.asarray(spec.room_min, float), np.asarray(spec.room_max, float)
    keyframes, gt_maps = [], []
    gt_pts, gt_cls, gt_inst = [], [], []
    for fid, pose in enumerate(spec.trajectory):
        if np.any(pose.translation < lo) or np.any(pose.translation > hi):
            log.warning("frame %d: camera at %s lies outside the room", fid, np.round(pose.translation, 3))
        rng = np.random.default_rng([seed, fid])
        depth, inst = render_gt(spec, pose)
        mask = _noisy_mask(spec, inst, depth, rng)
        feats = _features(spec, mask, inst, classes, emb, rng)
        conf = _confidence(mask, depth)
        keyframes.append(Keyframe(fid, intr, pose, depth, mask, feats, conf))
        gt_maps.append(inst)
        pts, idx = back_project_depth(intr, pose, depth)
        g = inst.reshape(-1)[idx]
        gt_pts.append(pts)
        gt_inst.append(g)
        gt_cls.append(np.array([classes[int(x)] for x in g], dtype=np.int64))
    pts = np.concatenate(gt_pts) if gt_pts else np.zeros((0, 3))
    ginst = np.concatenate(gt_inst) if gt_inst else np.zeros(0, np.int64)
    gcls = np.concatenate(gt_cls) if gt_cls else np.zeros(0, np.int64)
    # thin to one point per gt_resolution cell, first occurrence wins
    if len(pts):
        _, first = np.unique(pack_keys(voxelize_points(pts, gt_resolution)), return_index=True)
        keep = np.sort(first)
        pts, ginst, gcls = pts[keep].astype(np.float32).astype(np.float64), ginst[keep], gcls[keep]
    info = {cid: (name, thing) for cid, (name, thing) in zip(range(1, 100000), spec.class_names())}
    gt = GroundTruth(pts, gcls, ginst, info)
    scene = SyntheticScene(spec, keyframes, gt_maps, gt, spec.label_set(), classes)
    if out_dir is not None:
        write_scene(out_dir, scene)
    return scene


def _features(spec, mask, inst, classes, emb, rng):
    flat_m = mask.reshape(-1)
    flat_g = inst.reshape(-1)
    # majority GT class per mask id
    mask_class = {}
    for mid in np.unique(flat_m):
        if mid == 0:
            continue
        g = flat_g[flat_m == mid]
        g = g[g > 0]
        cls = np.array([classes[int(x)] for x in g]) if len(g) else np.array([1])
        vals, counts = np.unique(cls, return_counts=True)
        mask_class[int(mid)] = int(vals[np.argmax(counts)])
    sigma = spec.feature_noise_sigma
    if not spec.per_pixel_features:
        out = {}
        for mid in sorted(mask_class):
            f = emb[mask_class[mid]] + sigma * rng.standard_normal(spec.feature_dim)
            out[mid] = (f / np.linalg.norm(f)).astype(np.float32)
        return out
    h, w = mask.shape
    feats = np.zeros((h * w, spec.feature_dim))
    for mid, cls in mask_class.items():
        sel = flat_m == mid
        f = emb[cls][None, :] + sigma * rng.standard_normal((int(sel.sum()), spec.feature_dim))
        feats[sel] = f / np.linalg.norm(f, axis=1, keepdims=True)
    return feats.reshape(h, w, spec.feature_dim).astype(np.float32)


def write_scene(out_dir, scene: SyntheticScene):
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    write_intrinsics(root / "intrinsics.txt", scene.spec.intrinsics)
    for kf in scene.keyframes:
        write_keyframe(root, kf)
    write_gt(root, scene.gt)
    write_labels(root, scene.labels)


def example_spec_path() -> Path:
    return Path(__file__).with_name("data") / "example_scene.json"


def load_example_spec(**noise) -> SyntheticSpec:
    spec = SyntheticSpec.from_json(example_spec_path())
    return spec.with_noise(**noise) if noise else spec
