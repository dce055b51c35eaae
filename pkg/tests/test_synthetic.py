import numpy as np
import pytest

from panfuse.geometry import CameraIntrinsics, look_at
from panfuse.synthetic import PART_STRIDE, SceneObject, SyntheticSpec, generate_synthetic, load_example_spec


def _one_box_spec(**noise) -> SyntheticSpec:
    traj = [look_at((0.3 + 0.1 * i, 0.4, 1.6), (1.5, 1.5, 0.3)) for i in range(4)]
    return SyntheticSpec(
        room_min=(0.0, 0.0, 0.0),
        room_max=(3.0, 3.0, 2.5),
        objects=[SceneObject("box", (0.5, 0.5, 0.6), (1.5, 1.5, 0.3))],
        trajectory=traj,
        intrinsics=CameraIntrinsics(40.0, 40.0, 15.5, 11.5, 32, 24),
        feature_dim=8,
        **noise,
    )


def test_noise_free_masks_are_gt_ids():
    scene = generate_synthetic(_one_box_spec(), seed=1)
    stuff = {1, 2, 3}  # floor and two walls
    for kf, gt in zip(scene.keyframes, scene.gt_instance_maps):
        ids = set(np.unique(kf.mask).tolist()) - {0}
        assert ids <= stuff | {4}
        assert 4 in ids
        np.testing.assert_array_equal(kf.mask, np.where(kf.depth > 0, gt, 0))


def test_over_segmentation_splits_each_object_into_k_parts():
    scene = generate_synthetic(_one_box_spec(over_segmentation_k=3), seed=5)
    for kf, gt in zip(scene.keyframes, scene.gt_instance_maps):
        box = gt == 4
        assert box.sum() >= 3
        parts = set(np.unique(kf.mask[box]).tolist())
        assert parts == {4, PART_STRIDE * 4 + 1, PART_STRIDE * 4 + 2}
        # stuff surfaces are never split
        assert set(np.unique(kf.mask[gt == 1]).tolist()) == {1}


def test_same_seed_gives_identical_directories(tmp_path):
    spec = _one_box_spec(over_segmentation_k=2, id_flicker_prob=0.5, boundary_noise_px=1, feature_noise_sigma=0.2)
    generate_synthetic(spec, seed=3, out_dir=tmp_path / "a")
    generate_synthetic(spec, seed=3, out_dir=tmp_path / "b")
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert files_a == files_b and len(files_a) > 4 * 5
    for rel in files_a:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel


def test_seed_changes_noise_not_geometry():
    spec = _one_box_spec(id_flicker_prob=1.0, boundary_noise_px=1)
    a, b = generate_synthetic(spec, seed=0), generate_synthetic(spec, seed=1)
    np.testing.assert_array_equal(a.gt.points, b.gt.points)
    np.testing.assert_array_equal(a.gt.instances, b.gt.instances)
    assert any(not np.array_equal(x.mask, y.mask) for x, y in zip(a.keyframes, b.keyframes))


def test_flicker_only_renames_ids():
    scene = generate_synthetic(_one_box_spec(id_flicker_prob=1.0), seed=2)
    for kf, gt in zip(scene.keyframes, scene.gt_instance_maps):
        valid = kf.depth > 0
        pairs = set(zip(kf.mask[valid].tolist(), gt[valid].tolist()))
        # bijection between mask ids and GT ids
        assert len({m for m, _ in pairs}) == len(pairs) == len({g for _, g in pairs})


def test_features_are_class_embeddings_without_noise():
    scene = generate_synthetic(_one_box_spec(), seed=0)
    emb = scene.spec.class_embeddings()
    kf = scene.keyframes[0]
    for mid, f in kf.features.items():
        np.testing.assert_allclose(f, emb[scene.instance_classes[mid]], atol=1e-7)


def test_example_spec_layout():
    spec = load_example_spec()
    assert len(spec.trajectory) == 40 and spec.intrinsics.shape == (48, 64)
    assert spec.feature_dim == 16 and len(spec.objects) == 3 and len(spec.walls) == 2
    ids, emb = spec.label_set().embedding_matrix()
    np.testing.assert_allclose(emb @ emb.T, np.eye(len(ids)))


@pytest.mark.parametrize(
    "change, message",
    [
        ({"over_segmentation_k": 0}, "over_segmentation_k"),
        ({"id_flicker_prob": 2.0}, "id_flicker_prob"),
        ({"walls": ("up",)}, "wall side"),
        ({"objects": [SceneObject("floor", (1, 1, 1), (1, 1, 1))]}, "reserved"),
        ({"objects": [SceneObject("box", (1, 1, 1), (9, 9, 9))]}, "within the room"),
    ],
)
def test_invalid_spec_fields_are_named(change, message):
    base = _one_box_spec()
    kwargs = {f: getattr(base, f) for f in base.__dataclass_fields__}
    kwargs.update(change)
    with pytest.raises(ValueError, match=message):
        SyntheticSpec(**kwargs)


def test_from_dict_rejects_unknown_fields():
    with pytest.raises(ValueError, match="unknown spec fields"):
        SyntheticSpec.from_dict({"room": {}, "bogus": 1})
    with pytest.raises(ValueError, match="unknown noise fields"):
        SyntheticSpec.from_dict(
            {
                "room": {"min": [0, 0, 0], "max": [1, 1, 1]},
                "objects": [],
                "trajectory": {"orbit": {"center": [0.5, 0.5, 0], "radius": 0.1, "height": 0.5, "frames": 2}},
                "camera": {"fx": 10, "fy": 10, "cx": 3, "cy": 3, "width": 8, "height": 8},
                "noise": {"gaussian": 1},
            }
        )
