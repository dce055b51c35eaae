"""Command-line entry point: ``panfuse {run,query,eval,synth,export}``.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import colorsys
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .checkpoint import load_map, save_map
from .config import StreamConfig, expected_window_count, load_config
from .fusion import FusionError
from .geometry import voxel_centers
from .ingestion import Scene, SceneFormatError, load_ground_truth, load_label_set, read_feature_file, select_keyframes
from .metrics import compute_metrics
from .pipeline import Mapper, iter_windows, worker_count
from .query import instance_query, project_to_gt, semantic_labels
from .synthetic import SyntheticSpec, example_spec_path, generate_synthetic

log = logging.getLogger("panfuse")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- run ---------------------------------------------------------------------

_CONFIG_FLAGS = {
    "stride": "keyframe_stride",
    "window_size": "window_size",
    "window_step": "window_step",
    "voxel_size": "voxel_size",
    "lambda1": "lambda1",
    "lambda2": "lambda2",
    "depth_tolerance": "depth_tolerance",
    "cues": "cues",
    "matching": "matching",
}


def _config_from_args(args) -> StreamConfig:
    cfg = load_config(args.config) if args.config else StreamConfig()
    overrides = {field: getattr(args, flag) for flag, field in _CONFIG_FLAGS.items() if getattr(args, flag) is not None}
    if args.audit:
        overrides["audit"] = True
    if args.mask_features_only:
        overrides["fuse_all_features"] = False
    return cfg.replace(**overrides)


def cmd_run(args) -> int:
    cfg = _config_from_args(args)
    scene = Scene(args.scene)
    if len(scene) == 0:
        raise SceneFormatError(scene.root / "frames", "no frames")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    mapper = Mapper(cfg, threads=worker_count(args.serial))
    n_keyframes = 0

    def counted():
        nonlocal n_keyframes
        for kf in select_keyframes(scene.frames(), cfg.keyframe_stride):
            n_keyframes += 1
            yield kf

    t0 = time.perf_counter()
    for window in iter_windows(counted(), cfg.window_size, cfg.window_step):
        gmap = mapper.process_window(window)
        if args.snapshots:
            save_map(out / f"map_w{len(mapper.reports) - 1:03d}.bin", gmap)
    total_ms = 1e3 * (time.perf_counter() - t0)
    if mapper.global_map is None:
        raise SceneFormatError(scene.root / "frames", "no frames")
    save_map(out / "map.bin", mapper.global_map)
    windows = [r.to_json() for r in mapper.reports]
    manifest = {
        "input": str(Path(args.scene).resolve()),
        "config": cfg.to_dict(),
        "frames": len(scene),
        "keyframes": n_keyframes,
        "window_count": len(windows),
        "expected_window_count": expected_window_count(n_keyframes, cfg.window_size, cfg.window_step),
        "windows": windows,
        "totals": {
            "lift_ms": sum(w["lift_ms"] for w in windows),
            "cluster_ms": sum(w["cluster_ms"] for w in windows),
            "fuse_ms": sum(w["fuse_ms"] for w in windows),
            "wall_ms": total_ms,
        },
        "instances": len(mapper.global_map),
        "voxels": len(mapper.global_map.grid),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"{n_keyframes} keyframes, {len(windows)} windows, {len(mapper.global_map)} instances -> {out / 'map.bin'}")
    return EXIT_OK


# -- query -------------------------------------------------------------------


def _read_embedding_text(path: Path) -> np.ndarray:
    try:
        return np.array(path.read_text().split(), dtype=np.float64)
    except ValueError:
        raise SceneFormatError(path, "expected whitespace-separated floats") from None


def cmd_query(args) -> int:
    gmap = load_map(args.map)
    if args.embedding is not None:
        path = Path(args.embedding)
        if not path.exists():
            raise SceneFormatError(path, "missing embedding file")
        emb = np.load(path).reshape(-1) if path.suffix == ".npy" else _read_embedding_text(path)
    else:
        path = Path(args.embeddings)
        if not path.exists():
            raise SceneFormatError(path, "missing label embeddings")
        _, _, table = read_feature_file(path)
        if args.class_id not in table:
            raise SceneFormatError(path, f"class id {args.class_id} has no embedding")
        emb = np.asarray(table[args.class_id], dtype=np.float64)
        emb = emb / np.linalg.norm(emb)
    ranked = instance_query(gmap, emb, top_k=args.top_k, min_score=args.min_score)
    out = [{"id": gid, "score": score, "voxel_count": int(gmap.registry[gid].keys.size)} for gid, score in ranked]
    print(json.dumps(out, indent=2))
    return EXIT_OK


# -- eval --------------------------------------------------------------------


def _label_paths(args):
    root = Path(args.gt)
    classes = Path(args.classes) if args.classes else root / "gt" / "classes.txt"
    embeddings = Path(args.embeddings) if args.embeddings else root / "labels" / "embeddings.bin"
    return classes, embeddings


def cmd_eval(args) -> int:
    gmap = load_map(args.map)
    scene_root = Path(args.gt)
    points = scene_root / "gt" / "points.bin"
    if not points.exists():
        raise SceneFormatError(points, "missing ground-truth point file")
    classes, embeddings = _label_paths(args)
    if not embeddings.exists():
        raise SceneFormatError(embeddings, "missing labels file")
    labels = load_label_set(classes, embeddings)
    gt = load_ground_truth(scene_root)
    pc, pi = project_to_gt(gmap, gt.points, labels, radius=args.radius)
    report = compute_metrics(pc, pi, gt.classes, gt.instances, labels)
    out = Path(args.out) if args.out else Path(args.map).with_name("report.json")
    out.write_text(json.dumps(report.to_json(), indent=2) + "\n")
    print(report.table())
    return EXIT_OK


# -- synth -------------------------------------------------------------------


def cmd_synth(args) -> int:
    spec_path = Path(args.spec) if args.spec else example_spec_path()
    if not spec_path.exists():
        raise SceneFormatError(spec_path, "missing spec file")
    try:
        spec = SyntheticSpec.from_json(spec_path)
        noise = {
            k: v
            for k, v in (
                ("over_segmentation_k", args.k),
                ("id_flicker_prob", args.flicker),
                ("boundary_noise_px", args.boundary_noise),
                ("feature_noise_sigma", args.feature_noise),
            )
            if v is not None
        }
        if noise:
            spec = spec.with_noise(**noise)
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise SceneFormatError(spec_path, f"invalid spec: {exc}") from None
    scene = generate_synthetic(spec, args.seed, out_dir=args.out)
    print(f"wrote {len(scene.keyframes)} frames and {len(scene.gt.points)} GT points to {args.out}")
    return EXIT_OK


# -- export ------------------------------------------------------------------


def palette(ids: np.ndarray) -> np.ndarray:
    """Deterministic distinct-ish RGB per id (golden-ratio hue walk); id 0 is gray."""
    ids = np.asarray(ids, dtype=np.int64)
    out = np.full((len(ids), 3), 128, dtype=np.uint8)
    lut = {}
    for i in np.unique(ids[ids != 0]).tolist():
        h = (i * 0.618033988749895) % 1.0
        s = 0.55 + 0.35 * ((i * 7) % 3) / 2
        v = 0.95 - 0.25 * ((i * 5) % 2)
        lut[i] = np.round(255 * np.array(colorsys.hsv_to_rgb(h, s, v))).astype(np.uint8)
    for i, c in lut.items():
        out[ids == i] = c
    return out


def pca_colors(features: np.ndarray) -> np.ndarray:
    """Map features to RGB through their top three principal components."""
    n = len(features)
    if n == 0:
        return np.zeros((0, 3), dtype=np.uint8)
    x = features - features.mean(axis=0)
    if not np.any(np.abs(x) > 1e-9):
        return np.full((n, 3), 128, dtype=np.uint8)
    _, _, vt = np.linalg.svd(x, full_matrices=False)
    comps = x @ vt[:3].T
    if comps.shape[1] < 3:
        comps = np.pad(comps, ((0, 0), (0, 3 - comps.shape[1])))
    lo, hi = comps.min(axis=0), comps.max(axis=0)
    span = np.where(hi - lo > 1e-9, hi - lo, 1.0)
    scaled = np.where(hi - lo > 1e-9, (comps - lo) / span, 0.5)
    return np.round(255 * scaled).astype(np.uint8)


def write_ply(path, points: np.ndarray, colors: np.ndarray):
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {len(points)}\n")
        fh.write("property float x\nproperty float y\nproperty float z\n")
        fh.write("property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n")
        for p, c in zip(points, colors):
            fh.write(f"{p[0]:.5f} {p[1]:.5f} {p[2]:.5f} {c[0]} {c[1]} {c[2]}\n")


def cmd_export(args) -> int:
    gmap = load_map(args.map)
    grid = gmap.grid
    pts = voxel_centers(grid.keys, gmap.voxel_size)
    if args.mode == "instance":
        colors = palette(grid.label)
    elif args.mode == "semantic":
        if not args.labels:
            raise UsageError("semantic export needs --labels (scene directory with gt/classes.txt and labels/)")
        root = Path(args.labels)
        emb = root / "labels" / "embeddings.bin"
        if not emb.exists():
            raise SceneFormatError(emb, "missing labels file")
        colors = palette(semantic_labels(gmap, load_label_set(root / "gt" / "classes.txt", emb)))
    else:
        colors = pca_colors(grid.features())
    write_ply(args.out, pts, colors)
    print(f"wrote {len(pts)} vertices to {args.out}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="panfuse", description="Online open-vocabulary panoptic voxel mapping.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="map a scene directory")
    r.add_argument("scene")
    r.add_argument("out")
    r.add_argument("--config", help="flat key = value config file")
    r.add_argument("--stride", type=int, help="keyframe stride")
    r.add_argument("--window-size", type=int)
    r.add_argument("--window-step", type=int)
    r.add_argument("--voxel-size", type=float)
    r.add_argument("--lambda1", type=float)
    r.add_argument("--lambda2", type=float)
    r.add_argument("--depth-tolerance", type=float)
    r.add_argument("--cues", help="subset of 'oxv'")
    r.add_argument("--matching", choices=["bidirectional", "forward", "backward", "nn"])
    r.add_argument("--mask-features-only", action="store_true", help="fuse features only on labeled pixels")
    r.add_argument("--audit", action="store_true", help="check registry/grid consistency after each window")
    r.add_argument("--snapshots", action="store_true", help="write a checkpoint after every window")
    r.add_argument("--serial", action="store_true", help="force single-threaded execution")
    r.set_defaults(func=cmd_run)

    q = sub.add_parser("query", help="rank instances against a text embedding")
    q.add_argument("map")
    src = q.add_mutually_exclusive_group(required=True)
    src.add_argument("--embedding", help="text file of floats or .npy vector")
    src.add_argument("--class-id", type=int, help="use this class's embedding from --embeddings")
    q.add_argument("--embeddings", help="labels/embeddings.bin (with --class-id)")
    q.add_argument("--top-k", type=int)
    q.add_argument("--min-score", type=float, default=-np.inf)
    q.set_defaults(func=cmd_query)

    e = sub.add_parser("eval", help="score a map against a scene's ground truth")
    e.add_argument("map")
    e.add_argument("gt", help="scene directory containing gt/ and labels/")
    e.add_argument("--classes")
    e.add_argument("--embeddings")
    e.add_argument("--radius", type=float, help="GT projection radius in meters (default 2 voxels)")
    e.add_argument("--out", help="report path (default: report.json next to the map)")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("synth", help="generate a synthetic scene directory")
    s.add_argument("out")
    s.add_argument("--spec", help="JSON scene spec (default: bundled example)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--k", type=int, help="over-segmentation parts per object")
    s.add_argument("--flicker", type=float, help="mask id flicker probability")
    s.add_argument("--boundary-noise", type=int)
    s.add_argument("--feature-noise", type=float)
    s.set_defaults(func=cmd_synth)

    x = sub.add_parser("export", help="write the map as an ASCII PLY")
    x.add_argument("map")
    x.add_argument("out")
    x.add_argument("--mode", choices=["instance", "semantic", "feature-pca"], default="instance")
    x.add_argument("--labels", help="scene directory with class list and embeddings (semantic mode)")
    x.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    if args.command == "query" and args.class_id is not None and not args.embeddings:
        parser.error("--class-id requires --embeddings")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"panfuse: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SceneFormatError, FusionError, ValueError, OSError) as exc:
        print(f"panfuse: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
