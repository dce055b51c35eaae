import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from panfuse.hungarian import assignment_total, hungarian

from oracles import brute_force_best, brute_force_lexicographic


def test_two_by_two_maximization():
    assert hungarian([[1, 2], [2, 1]]) == [(0, 1), (1, 0)]


def test_diagonal_dominant_matrix():
    s = np.ones((5, 5)) + 10 * np.eye(5)
    assert hungarian(s) == [(i, i) for i in range(5)]


def test_minimization():
    assert hungarian([[1, 2], [2, 1]], maximize=False) == [(0, 0), (1, 1)]


def test_rectangular_inputs_drop_padding():
    assert hungarian([[1.0, 5.0, 2.0]]) == [(0, 1)]
    assert hungarian([[1.0], [5.0], [2.0]]) == [(1, 0)]
    assert hungarian(np.zeros((0, 3))) == []


def test_ties_resolve_lexicographically():
    assert hungarian(np.ones((3, 3))) == [(0, 0), (1, 1), (2, 2)]
    assert hungarian([[1, 1], [1, 1], [1, 1]]) == [(0, 0), (1, 1)]
    assert hungarian([[0, 2, 2], [2, 0, 2]]) == [(0, 1), (1, 0)]


def test_invalid_input():
    with pytest.raises(ValueError):
        hungarian([1, 2, 3])
    with pytest.raises(ValueError):
        hungarian([[np.inf, 0.0]])


shapes = st.tuples(st.integers(1, 6), st.integers(1, 6))


@settings(max_examples=300, deadline=None)
@given(shapes.flatmap(lambda s: arrays(np.float64, s, elements=st.floats(-10, 10, allow_nan=False))))
def test_matches_exhaustive_optimum(scores):
    pairs = hungarian(scores)
    assert len(pairs) == min(scores.shape)
    assert len({r for r, _ in pairs}) == len({c for _, c in pairs}) == len(pairs)
    assert assignment_total(scores, pairs) == pytest.approx(brute_force_best(scores), abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(shapes.flatmap(lambda s: arrays(np.int64, s, elements=st.integers(0, 3))))
def test_integer_scores_with_many_ties_are_exact(scores):
    assert assignment_total(scores, hungarian(scores)) == brute_force_best(scores)


@settings(max_examples=200, deadline=None)
@given(shapes.flatmap(lambda s: arrays(np.int64, s, elements=st.integers(0, 2))))
def test_tied_optima_pick_lexicographically_smallest(scores):
    assert sorted(hungarian(scores)) == brute_force_lexicographic(scores)
