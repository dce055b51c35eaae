"""Keyframes and the on-disk scene directory format.

Layout (little-endian throughout)::

    intrinsics.txt             fx fy cx cy width height
    frames/NNNNNN.pose.txt     16 floats, row-major camera-to-world
    frames/NNNNNN.depth.bin    H*W float32 meters, 0 = invalid
    frames/NNNNNN.mask.bin     H*W uint32, 0 = unlabeled
    frames/NNNNNN.conf.bin     H*W float32 in [0, 1]
    frames/NNNNNN.feat.bin     b"PGF1", mode u8, D_f u32, payload
    gt/points.bin              count u32, (x, y, z f32, class u32, instance u32)*
    gt/classes.txt             "id name thing|stuff" per line
    labels/embeddings.bin      feat.bin mode-0 framing keyed by class id
"""

from __future__ import annotations

import logging
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .geometry import CameraIntrinsics, Pose
from .labels import ClassInfo, LabelSet

log = logging.getLogger(__name__)

FEAT_MAGIC = b"PGF1"
MODE_PER_MASK = 0
MODE_PER_PIXEL = 1

_FRAME_RE = re.compile(r"^(\d{6})\.pose\.txt$")
GT_POINT_DTYPE = np.dtype(
    [("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("cls", "<u4"), ("inst", "<u4")]
)


class SceneFormatError(ValueError):
    """Malformed scene file; message names the file and, for binary files, the byte offset."""

    def __init__(self, path, message, offset=None):
        self.path = Path(path)
        self.offset = offset
        where = f"{self.path}" if offset is None else f"{self.path} @ byte {offset}"
        super().__init__(f"{where}: {message}")


@dataclass(eq=False)
class Keyframe:
    frame_id: int
    intrinsics: CameraIntrinsics
    pose: Pose
    depth: np.ndarray
    mask: np.ndarray
    # per-mask {mask_id: (D_f,)} or per-pixel (H, W, D_f)
    features: dict | np.ndarray
    confidence: np.ndarray

    def __post_init__(self):
        shape = self.intrinsics.shape
        for name in ("depth", "mask", "confidence"):
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ValueError(f"frame {self.frame_id}: {name} has shape {arr.shape}, expected {shape}")
        if isinstance(self.features, dict):
            dims = {len(np.asarray(v).reshape(-1)) for v in self.features.values()}
            if len(dims) > 1:
                raise ValueError(f"frame {self.frame_id}: feature rows have mixed dimensions {sorted(dims)}")
            missing = sorted(set(np.unique(self.mask).tolist()) - {0} - set(self.features))
            if missing:
                raise ValueError(f"frame {self.frame_id}: mask id {missing[0]} has no feature row")
        else:
            feats = np.asarray(self.features)
            if feats.ndim != 3 or feats.shape[:2] != shape:
                raise ValueError(f"frame {self.frame_id}: per-pixel features must be H x W x D_f")

    @property
    def per_pixel(self) -> bool:
        return not isinstance(self.features, dict)

    @property
    def feature_dim(self) -> int:
        if self.per_pixel:
            return int(self.features.shape[2])
        for v in self.features.values():
            return len(v)
        return 0

    def mask_ids(self) -> list[int]:
        ids = np.unique(self.mask)
        return [int(i) for i in ids if i != 0]

    def pixel_features(self, flat_index: np.ndarray) -> np.ndarray:
        """Feature vectors at row-major pixel indices; per-mask rows are broadcast."""
        if self.per_pixel:
            return np.asarray(self.features, dtype=np.float64).reshape(-1, self.feature_dim)[flat_index]
        ids = self.mask.reshape(-1)[flat_index]
        out = np.zeros((len(flat_index), self.feature_dim))
        for mid in np.unique(ids):
            if mid == 0:
                continue
            out[ids == mid] = self.features[int(mid)]
        return out

    def equals(self, other: Keyframe) -> bool:
        if self.frame_id != other.frame_id or self.intrinsics != other.intrinsics or self.pose != other.pose:
            return False
        for name in ("depth", "mask", "confidence"):
            if not np.array_equal(getattr(self, name), getattr(other, name)):
                return False
        if self.per_pixel != other.per_pixel:
            return False
        if self.per_pixel:
            return np.array_equal(self.features, other.features)
        return self.features.keys() == other.features.keys() and all(
            np.array_equal(self.features[k], other.features[k]) for k in self.features
        )


@dataclass
class GroundTruth:
    points: np.ndarray
    classes: np.ndarray
    instances: np.ndarray
    class_info: dict[int, tuple[str, bool]] = field(default_factory=dict)


def select_keyframes(stream: Iterable[Keyframe], stride: int) -> Iterator[Keyframe]:
    """Keep frames whose index in the stream is a multiple of ``stride``."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    for i, kf in enumerate(stream):
        if i % stride == 0:
            yield kf


# -- reading -----------------------------------------------------------------


def read_intrinsics(path) -> CameraIntrinsics:
    path = Path(path)
    if not path.exists():
        raise SceneFormatError(path, "missing intrinsics file")
    parts = path.read_text().split()
    if len(parts) != 6:
        raise SceneFormatError(path, f"expected 6 values (fx fy cx cy width height), got {len(parts)}")
    try:
        fx, fy, cx, cy = (float(p) for p in parts[:4])
        width, height = int(float(parts[4])), int(float(parts[5]))
        return CameraIntrinsics(fx, fy, cx, cy, width, height)
    except ValueError as exc:
        raise SceneFormatError(path, str(exc)) from None


def read_pose(path) -> Pose:
    path = Path(path)
    parts = path.read_text().split()
    if len(parts) != 16:
        raise SceneFormatError(path, f"expected 16 values, got {len(parts)}")
    try:
        return Pose.from_matrix(np.array([float(p) for p in parts]))
    except ValueError as exc:
        raise SceneFormatError(path, str(exc)) from None


def _read_raster(path, dtype, shape) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise SceneFormatError(path, "missing file")
    data = path.read_bytes()
    itemsize = np.dtype(dtype).itemsize
    need = shape[0] * shape[1] * itemsize
    if len(data) != need:
        kind = "truncated" if len(data) < need else "trailing bytes"
        offset = (len(data) // itemsize) * itemsize if len(data) < need else need
        raise SceneFormatError(
            path, f"{kind}: expected {need} bytes for {shape[1]}x{shape[0]}, got {len(data)}", offset
        )
    return np.frombuffer(data, dtype=dtype).reshape(shape).copy()


class _Cursor:
    def __init__(self, path, data: bytes):
        self.path, self.data, self.pos = path, data, 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise SceneFormatError(
                self.path, f"truncated while reading {what} (need {n} bytes, {len(self.data) - self.pos} left)", self.pos
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def array(self, count: int, dtype, what: str) -> np.ndarray:
        dt = np.dtype(dtype)
        return np.frombuffer(self.take(count * dt.itemsize, what), dtype=dt).copy()

    def finish(self):
        if self.pos != len(self.data):
            raise SceneFormatError(self.path, f"{len(self.data) - self.pos} trailing bytes", self.pos)


def read_feature_file(path, shape=None):
    """Parse a PGF1 file. Returns ``(mode, dim, payload)``; payload is a dict or (H, W, D) array."""
    path = Path(path)
    if not path.exists():
        raise SceneFormatError(path, "missing file")
    cur = _Cursor(path, path.read_bytes())
    magic = cur.take(4, "magic")
    if magic != FEAT_MAGIC:
        raise SceneFormatError(path, f"bad magic {magic!r}, expected {FEAT_MAGIC!r}", 0)
    mode = cur.take(1, "mode byte")[0]
    dim = cur.u32("feature dimension")
    if mode == MODE_PER_MASK:
        count = cur.u32("record count")
        rec = np.dtype([("id", "<u4"), ("f", "<f4", (dim,))])
        records = cur.array(count, rec, f"{count} records")
        payload = {int(r["id"]): np.array(r["f"], dtype=np.float32) for r in records}
        if len(payload) != count:
            raise SceneFormatError(path, "duplicate ids in per-mask records")
    elif mode == MODE_PER_PIXEL:
        if shape is None:
            raise SceneFormatError(path, "per-pixel features need the image size")
        payload = cur.array(shape[0] * shape[1] * dim, "<f4", "per-pixel payload").reshape(shape[0], shape[1], dim)
    else:
        raise SceneFormatError(path, f"unknown feature-file mode byte {mode}", 4)
    cur.finish()
    return mode, dim, payload


def read_gt_points(path) -> np.ndarray:
    path = Path(path)
    cur = _Cursor(path, path.read_bytes())
    count = cur.u32("point count")
    recs = cur.array(count, GT_POINT_DTYPE, f"{count} point records")
    cur.finish()
    return recs


def read_classes(path) -> dict[int, tuple[str, bool]]:
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) < 3 or parts[-1] not in ("thing", "stuff"):
            raise SceneFormatError(path, f"line {lineno}: expected 'id name thing|stuff'")
        out[int(parts[0])] = (" ".join(parts[1:-1]), parts[-1] == "thing")
    return out


class Scene:
    """Lazy reader over a scene directory."""

    def __init__(self, root):
        self.root = Path(root)
        if not self.root.is_dir():
            raise SceneFormatError(self.root, "not a directory")
        frames_dir = self.root / "frames"
        ids = []
        if frames_dir.is_dir():
            for p in frames_dir.iterdir():
                m = _FRAME_RE.match(p.name)
                if m:
                    ids.append(int(m.group(1)))
        self.frame_ids = sorted(ids)
        # a scene without frames needs no camera; callers report "no frames"
        self.intrinsics = read_intrinsics(self.root / "intrinsics.txt") if ids else None

    def __len__(self):
        return len(self.frame_ids)

    def frame_path(self, frame_id: int, suffix: str) -> Path:
        return self.root / "frames" / f"{frame_id:06d}.{suffix}"

    def read_frame(self, frame_id: int) -> Keyframe:
        shape = self.intrinsics.shape
        pose = read_pose(self.frame_path(frame_id, "pose.txt"))
        depth = _read_raster(self.frame_path(frame_id, "depth.bin"), "<f4", shape)
        mask = _read_raster(self.frame_path(frame_id, "mask.bin"), "<u4", shape)
        conf = _read_raster(self.frame_path(frame_id, "conf.bin"), "<f4", shape)
        feat_path = self.frame_path(frame_id, "feat.bin")
        _, _, feats = read_feature_file(feat_path, shape)
        try:
            return Keyframe(frame_id, self.intrinsics, pose, depth.astype(np.float32), mask.astype(np.uint32), feats, conf)
        except ValueError as exc:
            raise SceneFormatError(feat_path, str(exc)) from None

    def frames(self) -> Iterator[Keyframe]:
        for fid in self.frame_ids:
            yield self.read_frame(fid)

    def has_gt(self) -> bool:
        return (self.root / "gt" / "points.bin").exists()

    def load_gt(self) -> GroundTruth:
        return load_ground_truth(self.root)

    def load_labels(self) -> LabelSet:
        return load_label_set(self.root / "gt" / "classes.txt", self.root / "labels" / "embeddings.bin")


def load_ground_truth(root) -> GroundTruth:
    """Read ``gt/points.bin`` (and ``gt/classes.txt`` when present) under ``root``."""
    root = Path(root)
    pts_path = root / "gt" / "points.bin"
    if not pts_path.exists():
        raise SceneFormatError(pts_path, "missing ground-truth point file")
    recs = read_gt_points(pts_path)
    cls_path = root / "gt" / "classes.txt"
    info = read_classes(cls_path) if cls_path.exists() else {}
    pts = np.stack([recs["x"], recs["y"], recs["z"]], axis=1).astype(np.float64)
    return GroundTruth(pts, recs["cls"].astype(np.int64), recs["inst"].astype(np.int64), info)


def read_scene(path, stride: int = 1):
    """Open a scene directory; returns (keyframe iterator, ground truth or None)."""
    scene = Scene(path)
    gt = scene.load_gt() if scene.has_gt() else None
    return select_keyframes(scene.frames(), stride), gt


def load_label_set(classes_path, embeddings_path=None) -> LabelSet:
    classes_path = Path(classes_path)
    if not classes_path.exists():
        raise SceneFormatError(classes_path, "missing class list")
    info = read_classes(classes_path)
    emb = {}
    if embeddings_path is not None:
        embeddings_path = Path(embeddings_path)
        if not embeddings_path.exists():
            raise SceneFormatError(embeddings_path, "missing label embeddings")
        mode, _, emb = read_feature_file(embeddings_path)
        if mode != MODE_PER_MASK:
            raise SceneFormatError(embeddings_path, "label embeddings must use per-id (mode 0) framing", 4)
    entries = {}
    for cid, (name, thing) in info.items():
        vec = emb.get(cid)
        if vec is not None:
            vec = np.asarray(vec, dtype=np.float64)
            vec = vec / np.linalg.norm(vec)
        entries[cid] = ClassInfo(name, thing, vec)
    return LabelSet(entries)


# -- writing -----------------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def write_intrinsics(path, k: CameraIntrinsics):
    Path(path).write_text(
        " ".join([_fmt(k.fx), _fmt(k.fy), _fmt(k.cx), _fmt(k.cy), str(k.width), str(k.height)]) + "\n"
    )


def write_feature_file(path, features, dim: int | None = None):
    with open(path, "wb") as fh:
        if isinstance(features, dict):
            if dim is None:
                dim = len(next(iter(features.values()))) if features else 0
            fh.write(FEAT_MAGIC + bytes([MODE_PER_MASK]) + struct.pack("<I", dim))
            fh.write(struct.pack("<I", len(features)))
            rec = np.zeros(len(features), dtype=[("id", "<u4"), ("f", "<f4", (dim,))])
            for i, key in enumerate(sorted(features)):
                rec[i]["id"] = key
                rec[i]["f"] = features[key]
            fh.write(rec.tobytes())
        else:
            arr = np.ascontiguousarray(features, dtype="<f4")
            fh.write(FEAT_MAGIC + bytes([MODE_PER_PIXEL]) + struct.pack("<I", arr.shape[2]))
            fh.write(arr.tobytes())


def write_keyframe(root, kf: Keyframe):
    frames = Path(root) / "frames"
    frames.mkdir(parents=True, exist_ok=True)
    stem = frames / f"{kf.frame_id:06d}"
    m = kf.pose.matrix().reshape(-1)
    Path(f"{stem}.pose.txt").write_text(" ".join(_fmt(x) for x in m) + "\n")
    Path(f"{stem}.depth.bin").write_bytes(np.ascontiguousarray(kf.depth, dtype="<f4").tobytes())
    Path(f"{stem}.mask.bin").write_bytes(np.ascontiguousarray(kf.mask, dtype="<u4").tobytes())
    Path(f"{stem}.conf.bin").write_bytes(np.ascontiguousarray(kf.confidence, dtype="<f4").tobytes())
    write_feature_file(f"{stem}.feat.bin", kf.features, kf.feature_dim)


def write_gt(root, gt: GroundTruth):
    gdir = Path(root) / "gt"
    gdir.mkdir(parents=True, exist_ok=True)
    recs = np.zeros(len(gt.points), dtype=GT_POINT_DTYPE)
    recs["x"], recs["y"], recs["z"] = gt.points[:, 0], gt.points[:, 1], gt.points[:, 2]
    recs["cls"] = gt.classes
    recs["inst"] = gt.instances
    (gdir / "points.bin").write_bytes(struct.pack("<I", len(recs)) + recs.tobytes())
    lines = [f"{cid} {name} {'thing' if thing else 'stuff'}" for cid, (name, thing) in sorted(gt.class_info.items())]
    (gdir / "classes.txt").write_text("\n".join(lines) + "\n")


def write_labels(root, labels: LabelSet):
    ldir = Path(root) / "labels"
    ldir.mkdir(parents=True, exist_ok=True)
    feats = {cid: info.embedding for cid, info in labels.entries.items() if info.embedding is not None}
    write_feature_file(ldir / "embeddings.bin", feats)
