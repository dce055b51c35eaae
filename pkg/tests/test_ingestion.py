import numpy as np
import pytest

from panfuse.geometry import look_at
from panfuse.ingestion import (
    GroundTruth,
    Keyframe,
    Scene,
    SceneFormatError,
    load_ground_truth,
    load_label_set,
    read_feature_file,
    read_scene,
    select_keyframes,
    write_feature_file,
    write_gt,
    write_intrinsics,
    write_keyframe,
    write_labels,
)

from conftest import make_frame
from oracles import simple_labels


def _frames(n=3, per_pixel=False):
    rng = np.random.default_rng(0)
    out = []
    for i in range(n):
        depth = rng.uniform(1, 2, (6, 8)).astype(np.float32)
        depth[0, 0] = 0.0
        mask = rng.integers(0, 3, (6, 8))
        feats = rng.standard_normal((6, 8, 4)).astype(np.float32) if per_pixel else None
        pose = look_at((0.1 * i, 0, 0), (0.1 * i, 0.5, 2.0))
        out.append(make_frame(depth, mask, feats, frame_id=i, pose=pose))
    return out


def _write(root, frames):
    root.mkdir(parents=True, exist_ok=True)
    write_intrinsics(root / "intrinsics.txt", frames[0].intrinsics)
    for kf in frames:
        write_keyframe(root, kf)


@pytest.mark.parametrize("per_pixel", [False, True])
def test_three_frame_round_trip(tmp_path, per_pixel):
    frames = _frames(per_pixel=per_pixel)
    _write(tmp_path, frames)
    stream, gt = read_scene(tmp_path)
    got = list(stream)
    assert gt is None
    assert [kf.frame_id for kf in got] == [0, 1, 2]
    for a, b in zip(frames, got):
        assert a.equals(b)


def test_missing_feature_row_names_frame_and_id(tmp_path):
    frames = _frames(1)
    _write(tmp_path, frames)
    mask = frames[0].mask.copy()
    mask[2, 2] = 7
    (tmp_path / "frames" / "000000.mask.bin").write_bytes(mask.astype("<u4").tobytes())
    with pytest.raises(SceneFormatError, match=r"frame 0: mask id 7 has no feature row"):
        Scene(tmp_path).read_frame(0)


def test_truncated_depth_reports_byte_offset(tmp_path):
    _write(tmp_path, _frames(1))
    path = tmp_path / "frames" / "000000.depth.bin"
    path.write_bytes(path.read_bytes()[:-6])
    with pytest.raises(SceneFormatError) as info:
        Scene(tmp_path).read_frame(0)
    # 192 bytes expected, 186 present: the last whole float ends at byte 184
    assert info.value.offset == 184
    assert "@ byte 184" in str(info.value) and "depth.bin" in str(info.value)


def test_feature_file_framing_errors(tmp_path):
    p = tmp_path / "f.bin"
    write_feature_file(p, {1: np.ones(3, np.float32)})
    raw = p.read_bytes()
    p.write_bytes(raw[:4] + bytes([9]) + raw[5:])
    with pytest.raises(SceneFormatError, match="unknown feature-file mode byte 9"):
        read_feature_file(p)
    p.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(SceneFormatError, match="bad magic"):
        read_feature_file(p)
    p.write_bytes(raw[:-2])
    with pytest.raises(SceneFormatError, match="truncated"):
        read_feature_file(p)
    p.write_bytes(raw + b"\0")
    with pytest.raises(SceneFormatError, match="trailing"):
        read_feature_file(p)


def test_bad_text_files(tmp_path):
    _write(tmp_path, _frames(1))
    (tmp_path / "frames" / "000000.pose.txt").write_text("1 0 0\n")
    with pytest.raises(SceneFormatError, match="expected 16 values"):
        Scene(tmp_path).read_frame(0)
    (tmp_path / "intrinsics.txt").write_text("1 2 3\n")
    with pytest.raises(SceneFormatError, match="expected 6 values"):
        Scene(tmp_path)


def test_ground_truth_and_labels_round_trip(tmp_path):
    pts = np.array([[0.5, 1.0, 2.0], [0.25, -1.0, 3.5]])
    gt = GroundTruth(pts, np.array([1, 2]), np.array([1, 7]), {1: ("floor", False), 2: ("chair", True)})
    write_gt(tmp_path, gt)
    got = load_ground_truth(tmp_path)
    np.testing.assert_array_equal(got.points, pts)
    assert got.classes.tolist() == [1, 2] and got.instances.tolist() == [1, 7]
    assert got.class_info == gt.class_info

    labels = simple_labels(2, {2})
    write_labels(tmp_path, labels)
    loaded = load_label_set(tmp_path / "gt" / "classes.txt", tmp_path / "labels" / "embeddings.bin")
    assert loaded.thing_ids == [2]
    np.testing.assert_allclose(loaded.entries[2].embedding, labels.entries[2].embedding)


def test_missing_ground_truth(tmp_path):
    with pytest.raises(SceneFormatError, match="missing ground-truth"):
        load_ground_truth(tmp_path)


class _Stub:
    def __init__(self, i):
        self.frame_id = i


@pytest.mark.parametrize(
    "n, stride, expected",
    [(100, 20, [0, 20, 40, 60, 80]), (5, 20, [0]), (7, 1, list(range(7)))],
)
def test_select_keyframes(n, stride, expected):
    assert [f.frame_id for f in select_keyframes((_Stub(i) for i in range(n)), stride)] == expected


def test_select_keyframes_rejects_zero_stride():
    with pytest.raises(ValueError):
        list(select_keyframes([], 0))


def test_keyframe_shape_validation():
    good = make_frame(np.ones((4, 4)), np.ones((4, 4)))
    with pytest.raises(ValueError, match="depth has shape"):
        Keyframe(0, good.intrinsics, good.pose, np.ones((3, 4)), good.mask, good.features, good.confidence)
    with pytest.raises(ValueError, match="H x W x D_f"):
        Keyframe(0, good.intrinsics, good.pose, good.depth, good.mask, np.ones((4, 4)), good.confidence)
    with pytest.raises(ValueError, match="mixed dimensions"):
        make_frame(np.ones((2, 2)), [[1, 2], [0, 0]], {1: np.ones(2), 2: np.ones(3)})
