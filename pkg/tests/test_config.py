import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from panfuse.config import (
    StreamConfig,
    dump_config,
    expected_window_count,
    parse_config_text,
    window_starts,
)


def test_defaults_follow_reference_settings():
    cfg = StreamConfig()
    assert (cfg.keyframe_stride, cfg.window_size, cfg.window_step) == (20, 12, 7)
    assert (cfg.lambda1, cfg.lambda2, cfg.voxel_size) == (1.5, 0.8, 0.03)
    assert cfg.tolerance == pytest.approx(0.06)


def test_schedule_26_keyframes():
    assert window_starts(26, 12, 7) == [0, 7, 14]
    assert expected_window_count(26, 12, 7) == 3


def test_schedule_edge_cases():
    assert window_starts(0, 12, 7) == []
    assert window_starts(5, 12, 7) == [0]
    assert window_starts(12, 12, 7) == [0]
    assert window_starts(13, 12, 7) == [0, 7]


@given(st.integers(1, 300), st.integers(1, 30), st.integers(1, 30))
def test_window_count_formula(n, size, step):
    if step > size:
        step, size = size, step
    starts = window_starts(n, size, step)
    assert len(starts) == expected_window_count(n, size, step)
    if n >= size:
        assert len(starts) == math.ceil((n - size) / step) + 1
    # windows cover every keyframe and the last one reaches the end
    assert starts[-1] + size >= n


@pytest.mark.parametrize(
    "changes",
    [
        {"keyframe_stride": 0},
        {"window_step": 13},
        {"voxel_size": 0.0},
        {"lambda1": -1.0},
        {"cues": "oq"},
        {"cues": ""},
        {"matching": "greedy"},
        {"visibility_min_fraction": 1.5},
        {"depth_tolerance": 0.0},
    ],
)
def test_invalid_config_rejected(changes):
    with pytest.raises(ValueError):
        StreamConfig(**changes)


def test_config_text_round_trip():
    cfg = StreamConfig(voxel_size=0.05, cues="ox", matching="nn", audit=True, depth_tolerance=0.2)
    assert parse_config_text(dump_config(cfg)) == cfg


def test_config_text_parsing():
    cfg = parse_config_text("# comment\nλ1 = 1.2\nwindow_size = 10  # inline\nfuse_all_features = no\n")
    assert cfg.lambda1 == 1.2 and cfg.window_size == 10 and cfg.fuse_all_features is False
    with pytest.raises(ValueError, match="unknown key"):
        parse_config_text("nonsense = 1")
    with pytest.raises(ValueError, match="line 1"):
        parse_config_text("audit = maybe")
