"""Sparse voxel attribute grid holding feature F, confidence C, label T and weight K."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import pack_keys


@dataclass(frozen=True)
class AttributeVoxel:
    F: np.ndarray
    C: float
    T: int
    K: float


class AttributeGrid:
    """Column store over sorted packed voxel keys.

    Features are held premultiplied by confidence (``fc = F * C``) and divided on read.
    """

    def __init__(self, dim: int):
        self.dim = int(dim)
        self.keys = np.zeros(0, dtype=np.int64)
        self.fc = np.zeros((0, self.dim))
        self.conf = np.zeros(0)
        self.label = np.zeros(0, dtype=np.int64)
        self.weight = np.zeros(0)

    def __len__(self):
        return len(self.keys)

    def copy(self) -> AttributeGrid:
        g = AttributeGrid(self.dim)
        g.keys, g.fc, g.conf = self.keys.copy(), self.fc.copy(), self.conf.copy()
        g.label, g.weight = self.label.copy(), self.weight.copy()
        return g

    def rows(self, keys: np.ndarray) -> np.ndarray:
        """Row index of each key, -1 where absent."""
        keys = np.asarray(keys, dtype=np.int64)
        pos = np.searchsorted(self.keys, keys)
        pos_c = np.minimum(pos, max(len(self.keys) - 1, 0))
        hit = (pos < len(self.keys)) & (self.keys[pos_c] == keys) if len(self.keys) else np.zeros(len(keys), bool)
        return np.where(hit, pos_c, -1)

    def ensure(self, keys: np.ndarray) -> np.ndarray:
        """Insert missing keys with zeroed attributes; return rows of ``keys``."""
        keys = np.asarray(keys, dtype=np.int64)
        missing = np.setdiff1d(keys, self.keys, assume_unique=False)
        if len(missing):
            merged = np.concatenate([self.keys, missing])
            order = np.argsort(merged, kind="stable")

            def grow(arr, fill_shape):
                out = np.concatenate([arr, np.zeros(fill_shape, dtype=arr.dtype)])
                return out[order]

            self.fc = grow(self.fc, (len(missing), self.dim))
            self.conf = grow(self.conf, len(missing))
            self.label = grow(self.label, len(missing))
            self.weight = grow(self.weight, len(missing))
            self.keys = merged[order]
        return self.rows(keys)

    def features(self, rows=None) -> np.ndarray:
        """Confidence-normalized features F; zero vector where C = 0."""
        fc = self.fc if rows is None else self.fc[rows]
        c = self.conf if rows is None else self.conf[rows]
        out = np.zeros_like(fc)
        pos = c > 0
        out[pos] = fc[pos] / c[pos, None]
        return out

    def __getitem__(self, voxel) -> AttributeVoxel:
        key = pack_keys(np.asarray(voxel, dtype=np.int64).reshape(1, 3))
        r = int(self.rows(key)[0])
        if r < 0:
            raise KeyError(voxel)
        return AttributeVoxel(self.features([r])[0], float(self.conf[r]), int(self.label[r]), float(self.weight[r]))

    def __contains__(self, voxel) -> bool:
        key = pack_keys(np.asarray(voxel, dtype=np.int64).reshape(1, 3))
        return bool(self.rows(key)[0] >= 0)

    def labeled_keys(self, label: int) -> np.ndarray:
        return self.keys[self.label == label]
