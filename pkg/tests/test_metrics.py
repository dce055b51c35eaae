import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from panfuse.metrics import compute_metrics

from oracles import naive_metrics, simple_labels

LABELS = simple_labels(4, {3, 4})


def test_perfect_predictions():
    gc = np.array([1, 1, 2, 3, 3, 4, 4])
    gi = np.array([0, 0, 0, 5, 5, 6, 7])
    r = compute_metrics(gc, gi, gc, gi, LABELS)
    assert (r.miou, r.macc, r.prq_thing, r.prq_stuff) == (1.0, 1.0, 1.0, 1.0)


def test_single_pair_prq():
    gc = np.full(10, 3)
    gi = np.full(10, 1)
    pc = np.array([3] * 6 + [0] * 4)
    r = compute_metrics(pc, gi, gc, gi, LABELS)
    assert r.prq_thing == pytest.approx(0.6)
    assert r.per_class[3].seg_tp == 1 and r.per_class[3].matched_iou_sum == pytest.approx(0.6)


def test_one_gt_class_miou_is_its_iou():
    gc = np.full(8, 2)
    pc = np.array([2, 2, 2, 2, 2, 1, 1, 0])
    r = compute_metrics(pc, np.zeros(8), gc, np.zeros(8), LABELS)
    assert list(r.per_class) == [2]
    assert r.miou == r.per_class[2].iou == pytest.approx(5 / 8)
    assert r.macc == pytest.approx(5 / 8)


def test_extra_prediction_counts_as_false_positive():
    gc = np.array([3, 3, 3, 3, 1, 1])
    gi = np.array([1, 1, 1, 1, 0, 0])
    pc = np.array([3, 3, 3, 3, 3, 3])
    pi = np.array([1, 1, 1, 1, 2, 2])
    r = compute_metrics(pc, pi, gc, gi, LABELS)
    assert r.prq_thing == pytest.approx(1.0 / (1 + 0.5))
    assert r.prq_stuff == 0.0


def test_unknown_predicted_class_rejected():
    with pytest.raises(ValueError, match="not in the label set"):
        compute_metrics([9], [0], [1], [0], LABELS)
    with pytest.raises(ValueError, match="aligned"):
        compute_metrics([1, 1], [0], [1], [0], LABELS)


def test_report_json_and_table():
    gc = np.array([1, 3, 3])
    r = compute_metrics(gc, [0, 1, 1], gc, [0, 1, 1], LABELS)
    d = json.loads(json.dumps(r.to_json()))
    assert set(d) == {"miou", "macc", "prq_thing", "prq_stuff", "per_class"}
    assert d["per_class"]["c3"]["thing"] is True
    assert "PRQ(T) 100.00" in r.table()


def random_labeling(rng, n=None):
    n = n or int(rng.integers(1, 501))
    k = int(rng.integers(1, 9))
    gi = rng.integers(0, k, n)
    cls_of = rng.integers(1, 5, k)
    gc = cls_of[gi]
    gc[rng.random(n) < 0.1] = 0
    # predictions: a perturbed copy so that IoU > 0.5 matches occur
    pi = gi.copy()
    flip = rng.random(n) < rng.uniform(0, 0.6)
    pi[flip] = rng.integers(0, k + 2, flip.sum())
    pcls = np.concatenate([cls_of, rng.integers(1, 5, 2)])
    pc = pcls[pi]
    pc[rng.random(n) < 0.05] = 0
    return pc, pi, gc, gi


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_against_naive_oracle(seed):
    pc, pi, gc, gi = random_labeling(np.random.default_rng(seed))
    if not np.any(gc > 0):
        return
    r = compute_metrics(pc, pi, gc, gi, LABELS)
    ref = naive_metrics(pc, pi, gc, gi, set(LABELS.thing_ids))
    for key in ref:
        assert getattr(r, key) == pytest.approx(ref[key], abs=1e-9), key
    for v in (r.miou, r.macc, r.prq_thing, r.prq_stuff):
        assert 0.0 <= v <= 1.0
