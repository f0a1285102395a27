import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from exspot.errors import DurationExceededError, ShapeError, TooShortVideoError
from exspot.snippets import (
    concat_streams,
    pad_to_fixed,
    plan_snippets,
    pool_snippets,
    timestamp_to_frames,
)


def test_timestamp_count_l101():
    # L=101 drops the final frame, leaving starts 0, 2, ..., 92
    plan = plan_snippets(101, 8, 6)
    assert plan.usable_frames == 100
    assert plan.stride == 2
    assert plan.count == 47


def test_timestamp_count_l2274():
    assert plan_snippets(2274, 8, 6).count == 1133


def test_timestamp_count_matches_enumeration():
    for frames in (9, 17, 64, 100, 333):
        for s, d in ((8, 6), (8, 0), (32, 24), (4, 2)):
            if frames - 1 < s:
                continue
            plan = plan_snippets(frames, s, d)
            starts = [t for t in range(0, frames) if t % plan.stride == 0
                      and t + s - 1 <= plan.usable_frames - 1]
            assert plan.count == len(starts)


def test_plan_rejects_too_short():
    with pytest.raises(TooShortVideoError):
        plan_snippets(8, 8, 6)  # 8 frames leave only 7 usable
    plan_snippets(9, 8, 6)


def test_plan_rejects_bad_overlap():
    with pytest.raises(ShapeError):
        plan_snippets(100, 8, 8)
    with pytest.raises(ShapeError):
        plan_snippets(100, 8, -1)


def test_timestamp_to_frames_examples():
    assert timestamp_to_frames(plan_snippets(101, 8, 6), 3) == (6, 13)
    assert timestamp_to_frames(plan_snippets(402, 32, 24), 1) == (8, 39)


def test_timestamp_to_frames_range_checked():
    plan = plan_snippets(101, 8, 6)
    with pytest.raises(ShapeError):
        timestamp_to_frames(plan, plan.count)
    with pytest.raises(ShapeError):
        timestamp_to_frames(plan, -1)


def test_pool_snippets_means(rng):
    plan = plan_snippets(25, 8, 6)
    frames = rng.standard_normal((25, 3))
    pooled = pool_snippets(frames, plan)
    assert pooled.shape == (plan.count, 3)
    for t in range(plan.count):
        lo, hi = timestamp_to_frames(plan, t)
        np.testing.assert_allclose(pooled[t], frames[lo : hi + 1].mean(axis=0))


def test_pool_snippets_shape_check(rng):
    plan = plan_snippets(25, 8, 6)
    with pytest.raises(ShapeError):
        pool_snippets(rng.standard_normal((24, 3)), plan)


def test_concat_streams(rng):
    a = rng.standard_normal((5, 2))
    b = rng.standard_normal((5, 2))
    out = concat_streams(a, b)
    np.testing.assert_array_equal(out[:, :2], a)
    np.testing.assert_array_equal(out[:, 2:], b)
    with pytest.raises(ShapeError):
        concat_streams(a, b[:4])


def test_pad_to_fixed(rng):
    feats = rng.standard_normal((7, 3))
    seq = pad_to_fixed(feats, 10)
    assert seq.valid == 7
    np.testing.assert_array_equal(seq.features[:7], feats)
    np.testing.assert_array_equal(seq.features[7:], 0.0)
    np.testing.assert_array_equal(seq.mask, [1] * 7 + [0] * 3)


def test_pad_to_fixed_rejects_overflow(rng):
    with pytest.raises(DurationExceededError):
        pad_to_fixed(rng.standard_normal((11, 3)), 10)


@settings(max_examples=60, deadline=None)
@given(
    frames=st.integers(10, 400),
    s=st.sampled_from([4, 8, 16, 32]),
    d_frac=st.floats(0, 0.9),
)
def test_every_snippet_fits_in_usable_range(frames, s, d_frac):
    d = int(s * d_frac)
    if frames - 1 < s:
        return
    plan = plan_snippets(frames, s, d)
    last_lo, last_hi = timestamp_to_frames(plan, plan.count - 1)
    assert last_hi <= plan.usable_frames - 1
    # one more snippet would not fit
    assert last_lo + plan.stride + s - 1 > plan.usable_frames - 1
