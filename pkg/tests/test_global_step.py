from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lgeend.backend import Backend, OracleBackend
from lgeend.features import FeatureSequence, Window
from lgeend.global_step import (
    All,
    FirstN,
    GlobalStepError,
    RandomN,
    Subsample,
    assemble_affinity,
    build_pair_chunks,
    expected_chunk_count,
    max_pair_chunks,
    parse_strategy,
    plan_batches,
    run_global,
    score_pair,
    select_frames,
)
from lgeend.local_step import LocalResult, detect_local_speakers


def local_result(index, labels, ids=None):
    labels = np.asarray(labels, dtype=np.int8)
    if ids is not None:
        ids = tuple(frozenset(i) for i in ids)
    feats = FeatureSequence(np.zeros((len(labels), 23)), 0.1, index * 30.0, ids)
    return LocalResult(Window(index, feats), labels.astype(float), labels, detect_local_speakers(labels, index, 1))


def two_speaker_labels(n=20):
    labels = np.zeros((n, 3), np.int8)
    labels[: n // 2, 0] = 1
    labels[n // 2:, 1] = 1
    return labels


class TestStrategies:
    def test_first_and_sub(self):
        assert select_frames(list(range(10)), FirstN(4)) == [0, 1, 2, 3]
        assert select_frames(list(range(6)), Subsample(2)) == [0, 2, 4]

    def test_random_deterministic_and_sorted(self):
        frames = list(range(100))
        a = select_frames(frames, RandomN(3, seed=7), key=(1, 2))
        assert a == select_frames(frames, RandomN(3, seed=7), key=(1, 2))
        assert a == sorted(a) and len(a) == 3

    def test_random_short_input_kept(self):
        assert select_frames([4, 5], RandomN(8)) == [4, 5]

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            select_frames([], All())

    @pytest.mark.parametrize("text, expected", [
        ("all", All()), ("first:5", FirstN(5)), ("sub:2", Subsample(2)), ("random:64", RandomN(64, 3)),
    ])
    def test_parse(self, text, expected):
        assert parse_strategy(text, seed=3) == expected
        assert str(expected) == text

    def test_parse_rejects(self):
        with pytest.raises(ValueError):
            parse_strategy("most")
        with pytest.raises(ValueError):
            parse_strategy("first:0")


class TestPairChunks:
    def test_three_windows_two_speakers(self):
        results = [local_result(w, two_speaker_labels()) for w in range(3)]
        chunks = build_pair_chunks(results)
        assert len(chunks) == 12 == max_pair_chunks(3, 2)
        assert all(c.left.window_index < c.right.window_index for c in chunks)

    def test_single_window(self):
        assert build_pair_chunks([local_result(0, two_speaker_labels())]) == []

    def test_uneven_counts(self):
        one = np.zeros((20, 3), np.int8)
        one[:, 0] = 1
        chunks = build_pair_chunks([local_result(0, one), local_result(1, two_speaker_labels())])
        assert len(chunks) == 2

    def test_chunk_layout(self):
        chunks = build_pair_chunks([local_result(w, two_speaker_labels()) for w in range(2)], FirstN(4))
        c = chunks[0]
        assert (c.boundary_M, c.right_count_N, len(c.features)) == (4, 4, 8)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(0, 3), min_size=1, max_size=6))
    def test_count_matches_product_sum(self, counts):
        results = []
        for w, c in enumerate(counts):
            labels = np.zeros((12, 3), np.int8)
            for s in range(c):
                labels[4 * s:4 * s + 4, s] = 1
            results.append(local_result(w, labels))
        assert len(build_pair_chunks(results)) == expected_chunk_count(counts)
        assert expected_chunk_count(counts) <= max_pair_chunks(len(counts), 3)


class TestScorePair:
    def test_identical(self):
        z = np.array([[1, 0, 0]] * 4, float)
        assert score_pair(z, 2) == 1.0

    def test_orthogonal(self):
        z = np.array([[1, 0, 0], [0, 1, 0]], float)
        assert score_pair(z, 1) == 0.0

    def test_half(self):
        z = np.array([[1, 0, 0], [0.5, 0.5, 0]])
        assert score_pair(z, 1) == pytest.approx(1 / np.sqrt(2), abs=1e-12)

    def test_zero_vector(self):
        assert score_pair(np.zeros((2, 3)), 1) == 0.0

    def test_bad_boundary(self):
        with pytest.raises(ValueError):
            score_pair(np.ones((2, 3)), 2)


class TestRunGlobal:
    def _chunks(self):
        ids_a = ["A"] * 10 + ["B"] * 10
        ids_b = ["B"] * 10 + ["A"] * 10
        return build_pair_chunks([local_result(0, two_speaker_labels(), ids_a),
                                  local_result(1, two_speaker_labels(), ids_b)])

    def test_oracle_scores(self):
        scores = dict(run_global(OracleBackend(), self._chunks()))
        assert scores[((0, 0), (1, 1))] == pytest.approx(1.0)
        assert scores[((0, 0), (1, 0))] < 0.1

    def test_batch_size_irrelevant(self):
        chunks = self._chunks()
        assert run_global(OracleBackend(), chunks, 1) == run_global(OracleBackend(), chunks, 500)
        assert run_global(OracleBackend(), chunks, 3, workers=2) == run_global(OracleBackend(), chunks, 1)

    def test_empty(self):
        assert run_global(OracleBackend(), []) == []

    def test_plan_sizes(self):
        chunks = build_pair_chunks([local_result(w, two_speaker_labels()) for w in range(3)])
        assert [len(b) for b in plan_batches(chunks, 5)] == [5, 5, 2]

    def test_failure_names_pair(self):
        class Broken(Backend):
            s_local = 3

            def infer_batch(self, chunks):
                if any(len(c) > 0 for c in chunks):
                    raise RuntimeError("boom")

        with pytest.raises(GlobalStepError) as info:
            run_global(Broken(), self._chunks(), 2)
        assert info.value.pair in {c.key for c in self._chunks()}


class TestAffinity:
    def _speakers(self, counts):
        out = []
        for w, c in enumerate(counts):
            labels = np.zeros((12, 3), np.int8)
            for s in range(c):
                labels[4 * s:4 * s + 4, s] = 1
            out.extend(detect_local_speakers(labels, w, 1))
        return out

    def test_two_windows(self):
        aff = assemble_affinity({((0, 0), (1, 0)): 0.9}, self._speakers([1, 1]))
        np.testing.assert_array_equal(aff.matrix, [[1, 0.9], [0.9, 1]])

    def test_cannot_link(self):
        aff = assemble_affinity({}, self._speakers([2]))
        np.testing.assert_array_equal(aff.matrix, np.eye(2))

    def test_block_structure(self):
        speakers = self._speakers([2, 2, 2])
        scores = {(a.key, b.key): 0.5 for a in speakers for b in speakers if a.window_index < b.window_index}
        aff = assemble_affinity(scores, speakers)
        assert aff.dim == 6
        for w in range(3):
            block = aff.matrix[2 * w:2 * w + 2, 2 * w:2 * w + 2]
            np.testing.assert_array_equal(block, np.eye(2))
        np.testing.assert_array_equal(aff.matrix, aff.matrix.T)

    def test_missing_pair(self):
        with pytest.raises(KeyError):
            assemble_affinity({}, self._speakers([1, 1]))
