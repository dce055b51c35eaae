"""Camera model, rigid poses, back-projection, voxel keys and visibility."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .ingestion import Keyframe

# Packed voxel keys: 21 bits per axis, offset so negative indices stay positive.
_KEY_BITS = 21
_KEY_OFFSET = 1 << (_KEY_BITS - 1)
_KEY_MASK = (1 << _KEY_BITS) - 1


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return (int(self.height), int(self.width))


@dataclass(frozen=True)
class CarrierPoint:
    """Point-like scene carrier; ``scale`` is an isotropic stand-in for a covariance."""

    position: tuple[float, float, float]
    color: tuple[float, float, float] = (0.5, 0.5, 0.5)
    opacity: float = 1.0
    scale: float = 0.0

    def __post_init__(self):
        if not all(np.isfinite(self.position)):
            raise ValueError("carrier position must be finite")
        if not 0.0 < self.opacity <= 1.0:
            raise ValueError("carrier opacity must lie in (0, 1]")


@dataclass(frozen=True, eq=False)
class Pose:
    """Camera-to-world rigid transform."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-6) or abs(np.linalg.det(r) - 1.0) > 1e-6:
            raise ValueError("rotation must be orthonormal with determinant 1")
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> Pose:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> Pose:
        m = np.asarray(m, dtype=np.float64).reshape(4, 4)
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> Pose:
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform camera-frame points (..., 3) into the world frame."""
        return np.asarray(points) @ self.rotation.T + self.translation

    def apply_inverse(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points) - self.translation) @ self.rotation

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> Pose:
    """Pose of an OpenCV-style camera (x right, y down, z forward) at `eye` facing `target`."""
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    if np.linalg.norm(right) < 1e-9:
        raise ValueError("up vector is parallel to the viewing direction")
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rot = np.stack([right, down, forward], axis=1)
    # re-orthonormalize so the Pose invariant holds to machine precision
    u, _, vt = np.linalg.svd(rot)
    return Pose(u @ vt, eye)


def back_project(intrinsics: CameraIntrinsics, pose: Pose, depth: np.ndarray, u: int, v: int):
    """World point seen at pixel (u, v), or None when the depth there is invalid."""
    h, w = intrinsics.shape
    if not (0 <= u < w and 0 <= v < h):
        raise IndexError(f"pixel ({u}, {v}) outside {w}x{h} image")
    d = float(depth[v, u])
    if not np.isfinite(d) or d <= 0:
        return None
    cam = np.array([(u - intrinsics.cx) * d / intrinsics.fx, (v - intrinsics.cy) * d / intrinsics.fy, d])
    return pose.apply(cam)


def back_project_depth(intrinsics: CameraIntrinsics, pose: Pose, depth: np.ndarray):
    """Lift every valid-depth pixel.

    Returns ``(points, flat_index)`` where ``points`` is (N, 3) in world frame and
    ``flat_index`` indexes the row-major H*W image.
    """
    d = np.asarray(depth, dtype=np.float64).reshape(-1)
    valid = np.isfinite(d) & (d > 0)
    idx = np.flatnonzero(valid)
    w = intrinsics.width
    us = (idx % w).astype(np.float64)
    vs = (idx // w).astype(np.float64)
    dv = d[idx]
    cam = np.stack(
        [(us - intrinsics.cx) * dv / intrinsics.fx, (vs - intrinsics.cy) * dv / intrinsics.fy, dv], axis=1
    )
    return pose.apply(cam), idx


def project(intrinsics: CameraIntrinsics, pose: Pose, point):
    """Inverse of back_project: ``(u, v, depth)`` or None if behind the camera or off-image."""
    u, v, z, ok = project_points(intrinsics, pose, np.asarray(point, dtype=np.float64).reshape(1, 3))
    if not ok[0]:
        return None
    return float(u[0]), float(v[0]), float(z[0])


def project_points(intrinsics: CameraIntrinsics, pose: Pose, points: np.ndarray):
    """Vectorized projection; returns (u, v, depth, in_view) arrays."""
    cam = pose.apply_inverse(np.asarray(points, dtype=np.float64).reshape(-1, 3))
    z = cam[:, 2]
    in_front = z > 0
    safe_z = np.where(in_front, z, 1.0)
    u = intrinsics.fx * cam[:, 0] / safe_z + intrinsics.cx
    v = intrinsics.fy * cam[:, 1] / safe_z + intrinsics.cy
    ui = np.rint(u)
    vi = np.rint(v)
    ok = in_front & (ui >= 0) & (ui < intrinsics.width) & (vi >= 0) & (vi < intrinsics.height)
    return u, v, z, ok


def voxelize(point, voxel_size: float) -> tuple[int, int, int]:
    if voxel_size <= 0:
        raise ValueError("voxel_size must be positive")
    p = np.asarray(point, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(p)):
        raise ValueError(f"cannot voxelize non-finite point {p}")
    ix, iy, iz = np.floor(p / voxel_size).astype(np.int64)
    return int(ix), int(iy), int(iz)


def voxelize_points(points: np.ndarray, voxel_size: float) -> np.ndarray:
    """(N, 3) float points -> (N, 3) int64 voxel coordinates."""
    if voxel_size <= 0:
        raise ValueError("voxel_size must be positive")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if not np.all(np.isfinite(pts)):
        raise ValueError("cannot voxelize non-finite points")
    return np.floor(pts / voxel_size).astype(np.int64)


def pack_keys(coords: np.ndarray) -> np.ndarray:
    """Pack (N, 3) integer voxel coordinates into sortable int64 keys."""
    c = np.asarray(coords, dtype=np.int64).reshape(-1, 3) + _KEY_OFFSET
    if c.size and (c.min() < 0 or c.max() > _KEY_MASK):
        raise ValueError("voxel coordinates out of packable range")
    return (c[:, 0] << (2 * _KEY_BITS)) | (c[:, 1] << _KEY_BITS) | c[:, 2]


def unpack_keys(keys: np.ndarray) -> np.ndarray:
    k = np.asarray(keys, dtype=np.int64).reshape(-1)
    out = np.empty((k.size, 3), dtype=np.int64)
    out[:, 0] = (k >> (2 * _KEY_BITS)) & _KEY_MASK
    out[:, 1] = (k >> _KEY_BITS) & _KEY_MASK
    out[:, 2] = k & _KEY_MASK
    return out - _KEY_OFFSET


def voxel_centers(keys: np.ndarray, voxel_size: float) -> np.ndarray:
    return (unpack_keys(keys).astype(np.float64) + 0.5) * voxel_size


_NEIGHBORS_26 = np.array(
    [(dx, dy, dz) for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)], dtype=np.int64
)


def dilate_keys(keys: np.ndarray) -> np.ndarray:
    """Sorted unique keys of the 26-neighborhood dilation of a packed key set."""
    keys = np.asarray(keys, dtype=np.int64)
    if keys.size == 0:
        return keys.copy()
    coords = unpack_keys(keys)
    grown = (coords[:, None, :] + _NEIGHBORS_26[None, :, :]).reshape(-1, 3)
    return np.unique(pack_keys(grown))


def visibility_mask(
    keys: np.ndarray,
    intrinsics: CameraIntrinsics,
    pose: Pose,
    depth: np.ndarray,
    voxel_size: float,
    depth_tolerance: float,
):
    """Per-voxel visibility of packed keys from one view plus the pixel each lands on.

    Returns ``(visible, flat_pixel)``; ``flat_pixel`` is -1 where not visible.
    """
    if depth_tolerance <= 0:
        raise ValueError("depth_tolerance must be positive")
    centers = voxel_centers(keys, voxel_size)
    u, v, z, ok = project_points(intrinsics, pose, centers)
    flat = np.full(len(centers), -1, dtype=np.int64)
    if not ok.any():
        return ok, flat
    ui = np.rint(u[ok]).astype(np.int64)
    vi = np.rint(v[ok]).astype(np.int64)
    pix = vi * intrinsics.width + ui
    stored = np.asarray(depth, dtype=np.float64).reshape(-1)[pix]
    good = np.isfinite(stored) & (stored > 0) & (np.abs(z[ok] - stored) <= depth_tolerance)
    visible = np.zeros(len(centers), dtype=bool)
    sel = np.flatnonzero(ok)[good]
    visible[sel] = True
    flat[sel] = pix[good]
    return visible, flat


def visible_voxels(voxels, view: Keyframe, depth_tolerance: float, voxel_size: float) -> set:
    """Subset of ``voxels`` (iterable of (ix, iy, iz)) that pass the occlusion test in ``view``."""
    voxels = list(voxels)
    if not voxels:
        if depth_tolerance <= 0:
            raise ValueError("depth_tolerance must be positive")
        return set()
    keys = pack_keys(np.array(voxels, dtype=np.int64))
    vis, _ = visibility_mask(keys, view.intrinsics, view.pose, view.depth, voxel_size, depth_tolerance)
    return {tuple(int(c) for c in voxels[i]) for i in np.flatnonzero(vis)}
