import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from ppgpair.errors import DataError
from ppgpair.signals import (
    SampleSeries, Segment, downsample, minmax, minmax_normalize, preprocess, segment_recording,
)


def series(seconds, rate=40, seed=0):
    return SampleSeries(np.random.default_rng(seed).normal(size=int(seconds * rate)), rate)


@pytest.mark.parametrize("seconds, expected", [(90, 3), (30, 1), (89, 2)])
def test_segment_counts(seconds, expected):
    segs = segment_recording(series(seconds), "p", 30)
    assert len(segs) == expected
    assert all(len(s) == 1200 for s in segs)
    assert [s.t_start_s for s in segs] == [30.0 * k for k in range(expected)]


def test_segments_tile_the_prefix():
    s = series(100)
    segs = segment_recording(s, "p", 30)
    np.testing.assert_array_equal(np.concatenate([g.samples for g in segs]), s.samples[: 3 * 1200])


def test_too_short_recording():
    with pytest.raises(DataError, match="recording too short"):
        segment_recording(series(29), "p", 30)


def test_segment_carries_mask_fraction():
    s = series(60)
    mask = np.zeros(len(s), dtype=bool)
    mask[:300] = True
    segs = segment_recording(s, "p", 30, mask)
    assert segs[0].quality_y == 0.25 and segs[1].quality_y == 0.0


def test_segment_rejects_inconsistent_label():
    with pytest.raises(ValueError):
        Segment("s", "p", 0.0, np.zeros(4), 40, quality_y=0.5, artifact_mask=np.zeros(4, bool))


def test_downsample_240_to_40():
    out = downsample(series(30, 240), 40)
    assert len(out) == 1200 and out.sample_rate_hz == 40


def test_downsample_block_mean():
    np.testing.assert_array_equal(downsample(SampleSeries([1, 2, 3, 4, 5, 6], 6), 1).samples, [3.5])


def test_downsample_constant():
    out = downsample(SampleSeries(np.full(480, 2.5), 240), 40)
    np.testing.assert_array_equal(out.samples, np.full(80, 2.5))


def test_downsample_rejects_non_integer_ratio():
    with pytest.raises(DataError, match="unsupported resample ratio"):
        downsample(series(1, 250), 40)


@pytest.mark.parametrize("x, expected", [([2, 4, 6], [0, 0.5, 1]), ([5, 5, 5], [0, 0, 0]), ([-1, 0, 3], [0, 0.25, 1])])
def test_minmax_examples(x, expected):
    np.testing.assert_allclose(minmax(np.array(x, float)), expected)


def test_minmax_normalize_segment():
    seg = minmax_normalize(Segment("s", "p", 0.0, np.array([2.0, 4.0, 6.0]), 40))
    np.testing.assert_allclose(seg.samples, [0, 0.5, 1])


finite = st.floats(-1e3, 1e3, allow_nan=False)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(6, 60).map(lambda n: n * 6), elements=finite), st.floats(1e-3, 1e3))
def test_normalize_commutes_with_scaling(x, a):
    s = SampleSeries(x, 240)
    ref = minmax(downsample(s, 40).samples)
    scaled = minmax(downsample(SampleSeries(a * x, 240), 40).samples)
    np.testing.assert_allclose(scaled, ref, atol=1e-6)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(2, 200), elements=finite))
def test_minmax_idempotent(x):
    once = minmax(x)
    np.testing.assert_allclose(minmax(once), once, atol=1e-6)
    if x.max() > x.min():
        assert once.min() == 0.0 and once.max() == 1.0


def test_preprocess_pipeline():
    segs = preprocess(series(65, 240), "p")
    assert len(segs) == 2
    for s in segs:
        assert s.sample_rate_hz == 40 and len(s) == 1200
        assert s.samples.min() == 0.0 and s.samples.max() == 1.0
