"""Stream configuration and the flat ``key = value`` config file format."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path

CUE_NAMES = frozenset("oxv")
MATCHING_MODES = ("bidirectional", "forward", "backward", "nn")


@dataclass(frozen=True)
class StreamConfig:
    keyframe_stride: int = 20
    window_size: int = 12
    window_step: int = 7
    voxel_size: float = 0.03
    lambda1: float = 1.5
    lambda2: float = 0.8
    depth_tolerance: float | None = None  # None -> 2 * voxel_size
    visibility_min_fraction: float = 0.3
    min_segment_voxels: int = 5
    # subset of "oxv": geometry overlap, semantic cosine, view consensus
    cues: str = "oxv"
    matching: str = "bidirectional"
    # fuse F/C for voxels of every observed pixel, not only clustered ones
    fuse_all_features: bool = True
    audit: bool = False

    def __post_init__(self):
        if self.keyframe_stride < 1:
            raise ValueError("keyframe_stride must be >= 1")
        if not 1 <= self.window_step <= self.window_size:
            raise ValueError("need 1 <= window_step <= window_size")
        if not self.voxel_size > 0:
            raise ValueError("voxel_size must be positive")
        if not (self.lambda1 > 0 and self.lambda2 > 0):
            raise ValueError("lambda1 and lambda2 must be positive")
        if self.depth_tolerance is not None and not self.depth_tolerance > 0:
            raise ValueError("depth_tolerance must be positive")
        if not 0.0 <= self.visibility_min_fraction <= 1.0:
            raise ValueError("visibility_min_fraction must lie in [0, 1]")
        if not self.cues or set(self.cues) - CUE_NAMES:
            raise ValueError(f"cues must be a non-empty subset of 'oxv', got {self.cues!r}")
        if self.matching not in MATCHING_MODES:
            raise ValueError(f"matching must be one of {MATCHING_MODES}, got {self.matching!r}")

    @property
    def tolerance(self) -> float:
        return self.depth_tolerance if self.depth_tolerance is not None else 2.0 * self.voxel_size

    def replace(self, **changes) -> StreamConfig:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def window_starts(n_keyframes: int, window_size: int, window_step: int) -> list[int]:
    """Start offsets of the sliding windows over ``n_keyframes`` keyframes."""
    if n_keyframes <= 0:
        return []
    starts = [0]
    while starts[-1] + window_size < n_keyframes:
        starts.append(starts[-1] + window_step)
    return starts


def expected_window_count(n_keyframes: int, window_size: int, window_step: int) -> int:
    if n_keyframes <= window_size:
        return 1 if n_keyframes > 0 else 0
    return math.ceil((n_keyframes - window_size) / window_step) + 1


def _coerce(field: dataclasses.Field, raw: str):
    raw = raw.strip()
    kind = field.type if isinstance(field.type, str) else getattr(field.type, "__name__", "")
    if "bool" in kind:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{field.name}: expected a boolean, got {raw!r}")
    if "None" in kind and raw.lower() in ("none", ""):
        return None
    if "int" in kind:
        return int(raw)
    if "float" in kind:
        return float(raw)
    return raw


def parse_config_text(text: str, base: StreamConfig | None = None) -> StreamConfig:
    fields = {f.name: f for f in dataclasses.fields(StreamConfig)}
    aliases = {"λ1": "lambda1", "λ₁": "lambda1", "λ2": "lambda2", "λ₂": "lambda2"}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        key = aliases.get(key, key)
        if key not in fields:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        try:
            values[key] = _coerce(fields[key], raw)
        except ValueError as exc:
            raise ValueError(f"config line {lineno}: {exc}") from None
    return (base or StreamConfig()).replace(**values)


def load_config(path, base: StreamConfig | None = None) -> StreamConfig:
    return parse_config_text(Path(path).read_text(), base)


def dump_config(cfg: StreamConfig) -> str:
    lines = []
    for key, value in cfg.to_dict().items():
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
