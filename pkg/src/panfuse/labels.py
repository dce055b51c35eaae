from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ClassInfo:
    name: str
    is_thing: bool
    embedding: np.ndarray | None = None


@dataclass
class LabelSet:
    """Class vocabulary with unit text embeddings, keyed by class id."""

    entries: dict[int, ClassInfo] = field(default_factory=dict)

    def __post_init__(self):
        dims = set()
        for cid, info in self.entries.items():
            if cid <= 0:
                raise ValueError(f"class ids must be positive, got {cid}")
            if info.embedding is not None:
                n = float(np.linalg.norm(info.embedding))
                if abs(n - 1.0) > 1e-5:
                    raise ValueError(f"embedding of class {cid} ({info.name}) is not unit-norm: {n:.6f}")
                dims.add(len(info.embedding))
        if len(dims) > 1:
            raise ValueError(f"embeddings have mixed dimensions {sorted(dims)}")

    def __len__(self):
        return len(self.entries)

    def __contains__(self, cid):
        return cid in self.entries

    @property
    def class_ids(self) -> list[int]:
        return sorted(self.entries)

    @property
    def thing_ids(self) -> list[int]:
        return [c for c in self.class_ids if self.entries[c].is_thing]

    @property
    def stuff_ids(self) -> list[int]:
        return [c for c in self.class_ids if not self.entries[c].is_thing]

    def embedding_matrix(self) -> tuple[np.ndarray, np.ndarray]:
        """(class_ids, K x D matrix) over classes that carry embeddings, ascending id."""
        ids = [c for c in self.class_ids if self.entries[c].embedding is not None]
        if not ids:
            raise ValueError("label set has no embeddings")
        return np.array(ids, dtype=np.int64), np.stack([self.entries[c].embedding for c in ids])

    def name_to_id(self, name: str) -> int:
        for cid in self.class_ids:
            if self.entries[cid].name == name:
                return cid
        raise KeyError(name)
