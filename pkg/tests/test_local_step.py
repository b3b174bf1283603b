from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lgeend.backend import OracleBackend
from lgeend.features import FeatureSequence, split_windows
from lgeend.local_step import (
    Segment,
    binarize_and_filter,
    detect_local_speakers,
    median_filter_1d,
    run_local,
    segments_from_labels,
)


def _median_oracle(x, length):
    half = length // 2
    padded = [x[0]] * half + list(x) + [x[-1]] * half
    return [sorted(padded[i:i + length])[half] for i in range(len(x))]


class TestBinarize:
    def test_threshold_tie_is_active(self):
        assert binarize_and_filter(np.array([[0.5]]), 0.5, 1)[0, 0] == 1

    def test_spike_removed(self):
        out = binarize_and_filter(np.array([[0.0], [1.0], [0.0]]), 0.5, 3)
        np.testing.assert_array_equal(out[:, 0], [0, 0, 0])

    def test_gap_filled(self):
        out = binarize_and_filter(np.array([[1, 1, 0, 1, 1]], float).T, 0.5, 3)
        np.testing.assert_array_equal(out[:, 0], [1, 1, 1, 1, 1])

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            binarize_and_filter(np.zeros((3, 1)), 0.5, 4)
        with pytest.raises(ValueError):
            binarize_and_filter(np.zeros((3, 1)), 1.0, 3)

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.int8, st.integers(1, 40), elements=st.integers(0, 1)), st.sampled_from([1, 3, 5, 11]))
    def test_median_matches_reference(self, x, length):
        assert median_filter_1d(x, length).tolist() == _median_oracle(x.tolist(), length)


class TestDetect:
    def test_all_zero(self):
        assert detect_local_speakers(np.zeros((10, 3), np.int8)) == []

    def test_nonoverlap_sets(self):
        labels = np.zeros((15, 3), np.int8)
        labels[0:10, 0] = 1
        labels[5:15, 1] = 1
        s0, s1 = detect_local_speakers(labels, 2, min_nonoverlap=3)
        assert s0.nonoverlap_frames == tuple(range(5)) and s1.nonoverlap_frames == tuple(range(10, 15))
        assert s0.key == (2, 0) and not s0.used_overlap_fallback

    def test_fallback(self):
        labels = np.zeros((20, 2), np.int8)
        labels[:, 0] = 1
        labels[5:15, 1] = 1
        spk = detect_local_speakers(labels, 0, min_nonoverlap=10)
        assert spk[1].used_overlap_fallback
        assert spk[1].nonoverlap_frames == spk[1].active_frames == tuple(range(5, 15))

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.int8, st.tuples(st.integers(1, 30), st.integers(1, 4)), elements=st.integers(0, 1)))
    def test_overlap_frames_are_in_no_clean_set(self, labels):
        speakers = detect_local_speakers(labels, 0, min_nonoverlap=0)
        clean = set().union(*(s.nonoverlap_frames for s in speakers)) if speakers else set()
        overlapped = set(np.flatnonzero(labels.sum(axis=1) >= 2).tolist())
        assert not clean & overlapped
        for s in speakers:
            assert set(s.nonoverlap_frames) <= set(s.active_frames)
            assert list(s.active_frames) == sorted(set(s.active_frames))


class TestSegments:
    def test_window_offset(self):
        labels = np.zeros((10, 2), np.int8)
        labels[0:5, 0] = 1
        (seg,) = segments_from_labels(labels, 30.0, 0.1)
        assert seg.speaker == 0
        assert (seg.start, seg.end) == pytest.approx((30.0, 30.5))

    def test_alternating(self):
        segs = segments_from_labels(np.array([[1], [0], [1]]), 0.0, 0.1, window_index=4)
        assert len(segs) == 2 and segs[0].speaker == (4, 0)

    def test_empty(self):
        assert segments_from_labels(np.zeros((0, 3)), 0.0, 0.1) == []

    def test_segment_validation(self):
        with pytest.raises(ValueError):
            Segment(0, 1.0, 1.0)


def test_run_local_with_oracle():
    ids = tuple(frozenset(["A"]) if t < 50 else frozenset(["B"]) for t in range(100))
    feats = FeatureSequence(np.zeros((100, 23)), 0.1, 0.0, ids)
    results = run_local(split_windows(feats, 60), OracleBackend())
    assert [len(r.speakers) for r in results] == [2, 1]
    assert results[1].window.start_time == pytest.approx(6.0)
