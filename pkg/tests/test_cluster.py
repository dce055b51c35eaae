import random

import numpy as np
import pytest

from panfuse.cluster import (
    EdgeCues,
    candidate_pairs,
    cluster_window,
    geometry_cue,
    merge_decision,
    semantic_cue,
    view_consensus_cue,
)
from panfuse.config import StreamConfig
from panfuse.geometry import back_project, pack_keys, voxel_centers, voxelize
from panfuse.ingestion import Keyframe
from panfuse.segments import Segment, SegmentRegistry, lift_segments

from conftest import make_frame

VS = 0.1


def _wall(frame_id=0, mask=None, depth=2.0):
    m = np.ones((12, 16), int) if mask is None else mask
    return make_frame(np.full((12, 16), depth), m, frame_id=frame_id)


def _surface_voxels(kf):
    out = []
    for u in range(0, 16, 3):
        v = 6
        out.append(voxelize(back_project(kf.intrinsics, kf.pose, kf.depth, u, v), VS))
    out = sorted(set(out))
    assert len(out) >= 5
    return out


def _seg(seg_id, voxels, frame_id=0, feature=(1.0, 0.0, 0.0, 0.0)):
    keys = np.unique(pack_keys(np.array(voxels)))
    return Segment(seg_id, (frame_id, 1), keys, voxel_centers(keys, VS), np.asarray(feature), len(keys))


def test_geometry_cue_examples():
    kf0, kf1 = _wall(0), _wall(1)
    a, b, c, d = _surface_voxels(kf0)[:4]
    views = {0: kf0, 1: kf1}
    si, sj = _seg(0, [a, b, c], 0), _seg(1, [b, c, d], 1)
    assert geometry_cue(si, sj, views, 2 * VS, VS) == pytest.approx(2 / 3)
    assert geometry_cue(si, _seg(2, [a, b, c], 1), views, 2 * VS, VS) == pytest.approx(1.0)
    assert geometry_cue(_seg(3, [a], 0), _seg(4, [d], 1), views, 2 * VS, VS) == 0.0


def test_geometry_cue_normalizes_by_visible_part_only():
    kf0, kf1 = _wall(0), _wall(1)
    a, b, c = _surface_voxels(kf0)[:3]
    hidden = (a[0], a[1], a[2] + 15)  # far behind the wall
    views = {0: kf0, 1: kf1}
    si, sj = _seg(0, [a, b], 0), _seg(1, [a, b, hidden], 1)
    # the occluded voxel is excluded from Cont in both directions
    assert geometry_cue(si, sj, views, 2 * VS, VS) == pytest.approx(1.0)


def test_semantic_cue_examples():
    z = np.array([0.6, 0.8, 0.0])
    assert semantic_cue(z, z) == pytest.approx(1.0)
    assert semantic_cue(z, np.array([0.8, -0.6, 0.0])) == pytest.approx(0.0)
    assert semantic_cue(z, -z) == pytest.approx(-1.0)


def test_view_consensus_ratio():
    left = np.ones((12, 16), int)
    left[:, 8:] = 2
    frames = [_wall(i) for i in range(3)] + [_wall(3, left)]
    vox = _surface_voxels(frames[0])
    si, sj = _seg(0, vox[:2], 0), _seg(1, vox[-2:], 1)
    assert view_consensus_cue(si, sj, frames, 0.3, 2 * VS, VS) == pytest.approx(0.75)


def test_view_consensus_without_common_views_is_zero():
    frames = [_wall(i, depth=0.5) for i in range(2)]  # wall in front of every voxel
    vox = _surface_voxels(_wall(0))
    si, sj = _seg(0, vox[:2], 0), _seg(1, vox[-2:], 1)
    assert view_consensus_cue(si, sj, frames, 0.3, 2 * VS, VS) == 0.0
    with pytest.raises(ValueError):
        view_consensus_cue(si, sj, [], 0.3, 2 * VS, VS)


def _mask_gt(scene, frame, mask_id):
    kf = scene.keyframes[frame]
    g = scene.gt_instance_maps[frame][kf.mask == mask_id]
    vals, counts = np.unique(g, return_counts=True)
    return int(vals[np.argmax(counts)])


def test_view_consensus_is_one_for_same_object(clean_scene):
    window = clean_scene.keyframes[:12]
    thing = clean_scene.thing_instances()[0]
    a = [s for s in lift_segments(window[0], 0.03) if s.source[1] == thing][0]
    b = [s for s in lift_segments(window[5], 0.03) if s.source[1] == thing][0]
    assert _mask_gt(clean_scene, 0, thing) == _mask_gt(clean_scene, 5, thing) == thing
    assert view_consensus_cue(a, b, window, 0.3, 0.06, 0.03) == 1.0


@pytest.mark.parametrize(
    "cues, expected",
    [(EdgeCues(0.9, 0.7, 0.0), True), (EdgeCues(0.2, 0.3, 0.9), True), (EdgeCues(0.2, 0.3, 0.5), False)],
)
def test_merge_decision_examples(cues, expected):
    assert merge_decision(cues, 1.5, 0.8) is expected


def test_merge_decision_with_reduced_cues():
    c = EdgeCues(0.8, 0.0, 0.0)
    assert merge_decision(c, 1.5, 0.8, "o") is True  # 0.8 > 0.75
    assert merge_decision(c, 1.5, 0.8, "ox") is False
    assert merge_decision(EdgeCues(0.0, 0.0, 0.9), 1.5, 0.8, "ox") is False
    assert merge_decision(EdgeCues(0.0, 0.0, 0.9), 1.5, 0.8, "v") is True


def test_candidate_pairs_prune_distant_segments():
    segs = [_seg(0, [(0, 0, 0)]), _seg(1, [(2, 0, 0)]), _seg(2, [(9, 9, 9)])]
    assert candidate_pairs(segs).tolist() == [[0, 1]]
    assert candidate_pairs(segs[:1]).shape == (0, 2)


def _registry(frames, voxel_size=0.03):
    reg, nid = SegmentRegistry(), 0
    for kf in frames:
        segs = lift_segments(kf, voxel_size, first_id=nid)
        nid += len(segs)
        reg.add(segs)
    return reg


def test_single_segment_single_instance():
    kf = _wall(0)
    reg = SegmentRegistry()
    reg.add([_seg(0, _surface_voxels(kf))])
    (inst,) = cluster_window(reg, [kf], StreamConfig(voxel_size=VS))
    assert inst.N == 1 and inst.member_segments == [0]
    with pytest.raises(ValueError):
        cluster_window(SegmentRegistry(), [kf], StreamConfig(voxel_size=VS))


def test_identical_segments_merge(clean_scene):
    kf = clean_scene.keyframes[0]
    thing = clean_scene.thing_instances()[0]
    only = np.where(kf.mask == thing, kf.mask, 0)
    frames = [
        Keyframe(i, kf.intrinsics, kf.pose, kf.depth, only, {thing: kf.features[thing]}, kf.confidence) for i in (0, 1)
    ]
    (inst,) = cluster_window(_registry(frames), frames, StreamConfig())
    assert inst.N == 2


def test_infinite_thresholds_give_identity_clustering(split_scene):
    window = split_scene.keyframes[:4]
    reg = _registry(window)
    cfg = StreamConfig(lambda1=float("inf"), lambda2=float("inf"))
    inst = cluster_window(reg, window, cfg)
    assert len(inst) == len(reg)
    assert sorted(m for i in inst for m in i.member_segments) == [s.seg_id for s in reg]


def test_clustering_ignores_registry_order(split_scene):
    window = split_scene.keyframes[:6]
    reg = _registry(window)
    base = {tuple(i.member_segments) for i in cluster_window(reg, window, StreamConfig())}
    segs = list(reg)
    for seed in range(3):
        random.Random(seed).shuffle(segs)
        shuffled = SegmentRegistry()
        shuffled.add(segs)
        assert {tuple(i.member_segments) for i in cluster_window(shuffled, window, StreamConfig())} == base


def test_split_objects_regroup_into_gt_objects(split_scene):
    """Every thing instance gathers >= 9 segments, all of one GT object, and vice versa."""
    window = split_scene.keyframes[:12]
    reg = _registry(window)
    instances = cluster_window(reg, window, StreamConfig())
    things = set(split_scene.thing_instances())
    gt_of = {s.seg_id: _mask_gt(split_scene, s.frame_id, s.source[1]) for s in reg}

    # GT-side grouping of thing segments (oracle partition)
    by_gt: dict[int, set] = {}
    for sid, g in gt_of.items():
        if g in things:
            by_gt.setdefault(g, set()).add(sid)
    thing_instances = [set(i.member_segments) for i in instances if gt_of[i.member_segments[0]] in things]
    assert len(thing_instances) == 3
    assert sorted(map(sorted, thing_instances)) == sorted(map(sorted, by_gt.values()))
    assert all(len(m) >= 9 for m in thing_instances)
