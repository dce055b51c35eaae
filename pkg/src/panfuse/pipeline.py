"""Sliding-window orchestration: lift -> cluster -> local grids -> match -> global update."""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Iterator

from .cluster import cluster_window
from .config import StreamConfig
from .fusion import GlobalMap, match, update_global
from .ingestion import Keyframe
from .localmap import build_local_map
from .segments import SegmentRegistry, lift_segments

log = logging.getLogger(__name__)


def worker_count(serial: bool = False) -> int:
    if serial:
        return 1
    raw = os.environ.get("PANFUSE_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            log.warning("ignoring non-integer PANFUSE_THREADS=%r", raw)
    return 1


@dataclass
class WindowReport:
    """Per-window timings and counts; ``new_instances`` counts ids still registered after the update."""
    window_id: int
    frame_ids: list[int]
    lift_ms: float
    cluster_ms: float
    fuse_ms: float
    segments: int
    dropped_masks: int
    local_instances: int
    matches: int
    new_instances: int
    global_instances: int

    def to_json(self) -> dict:
        return {
            "window": self.window_id,
            "first_frame": self.frame_ids[0] if self.frame_ids else None,
            "keyframes": len(self.frame_ids),
            "lift_ms": self.lift_ms,
            "cluster_ms": self.cluster_ms,
            "fuse_ms": self.fuse_ms,
            "segments": self.segments,
            "dropped_masks": self.dropped_masks,
            "local_instances": self.local_instances,
            "matches": self.matches,
            "new_instances": self.new_instances,
            "global_instances": self.global_instances,
        }


def iter_windows(stream: Iterable[Keyframe], window_size: int, window_step: int) -> Iterator[list[Keyframe]]:
    """Yield windows as keyframes arrive; a trailing partial window covers leftover frames."""
    buf: list[Keyframe] = []
    fresh = 0
    for kf in stream:
        buf.append(kf)
        fresh += 1
        if len(buf) == window_size:
            yield list(buf)
            buf = buf[window_step:]
            fresh = 0
    if fresh:
        yield list(buf)


@dataclass
class Mapper:
    config: StreamConfig
    dim: int | None = None
    threads: int = 1
    global_map: GlobalMap | None = None
    reports: list[WindowReport] = field(default_factory=list)
    _segment_cache: dict = field(default_factory=dict)
    _next_seg_id: int = 0

    def _lift(self, keyframes: list[Keyframe]):
        todo = [kf for kf in keyframes if kf.frame_id not in self._segment_cache]
        report: dict = {}

        def one(kf):
            r: dict = {}
            segs = lift_segments(
                kf, self.config.voxel_size, min_segment_voxels=self.config.min_segment_voxels, report=r
            )
            return segs, r.get("dropped", 0)

        if self.threads > 1 and len(todo) > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                results = list(pool.map(one, todo))
        else:
            results = [one(kf) for kf in todo]
        dropped = 0
        # seg ids assigned after the fact so parallel lifting stays deterministic
        for kf, (segs, d) in zip(todo, results):
            for s in segs:
                s.seg_id = self._next_seg_id
                self._next_seg_id += 1
            self._segment_cache[kf.frame_id] = segs
            dropped += d
        report["dropped"] = dropped
        registry = SegmentRegistry()
        for kf in keyframes:
            registry.add(self._segment_cache[kf.frame_id])
        keep = {kf.frame_id for kf in keyframes}
        for fid in list(self._segment_cache):
            if fid not in keep:
                del self._segment_cache[fid]
        return registry, dropped

    def process_window(self, keyframes: list[Keyframe]) -> GlobalMap:
        cfg = self.config
        if not keyframes:
            raise ValueError("empty window")
        if self.dim is None:
            self.dim = keyframes[0].feature_dim
        if self.global_map is None:
            self.global_map = GlobalMap(cfg.voxel_size, self.dim)
        for kf in keyframes:
            if kf.feature_dim != self.dim:
                raise ValueError(f"frame {kf.frame_id}: feature dimension {kf.feature_dim}, expected {self.dim}")
        window_id = len(self.reports)

        t0 = time.perf_counter()
        registry, dropped = self._lift(keyframes)
        t1 = time.perf_counter()
        instances = cluster_window(registry, keyframes, cfg) if len(registry) else []
        t2 = time.perf_counter()
        local = build_local_map(keyframes, instances, cfg.voxel_size, self.dim, window_id, cfg.fuse_all_features)
        matches = match(local, self.global_map, cfg.matching)
        before = set(self.global_map.registry)
        update_global(local, self.global_map, matches)
        if cfg.audit:
            self.global_map.audit()
        t3 = time.perf_counter()

        rep = WindowReport(
            window_id=window_id,
            frame_ids=[kf.frame_id for kf in keyframes],
            lift_ms=1e3 * (t1 - t0),
            cluster_ms=1e3 * (t2 - t1),
            fuse_ms=1e3 * (t3 - t2),
            segments=len(registry),
            dropped_masks=dropped,
            local_instances=len(local.instances),
            matches=len(matches),
            new_instances=len(set(self.global_map.registry) - before),
            global_instances=len(self.global_map),
        )
        self.reports.append(rep)
        log.info(
            "window %d frames %d..%d: %d segments -> %d instances, %d matched, %d new (%.0f ms)",
            window_id, rep.frame_ids[0], rep.frame_ids[-1], rep.segments, rep.local_instances,
            rep.matches, rep.new_instances, rep.lift_ms + rep.cluster_ms + rep.fuse_ms,
        )
        return self.global_map

    def run(self, keyframes: Iterable[Keyframe]) -> GlobalMap:
        for window in iter_windows(keyframes, self.config.window_size, self.config.window_step):
            self.process_window(window)
        if self.global_map is None:
            raise ValueError("no frames")
        return self.global_map


def run_stream(keyframes: Iterable[Keyframe], config: StreamConfig, threads: int = 1) -> Mapper:
    """Map a keyframe stream (already stride-selected) with the given configuration."""
    mapper = Mapper(config, threads=threads)
    mapper.run(keyframes)
    return mapper
