from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lgeend.scoring import (
    Annotation,
    RttmError,
    Turn,
    UndefinedDerError,
    compute_der,
    emit_rttm,
    format_der_table,
    hungarian,
    merge_turns,
    optimal_assignment,
    parse_rttm,
)


@st.composite
def annotations(draw, names="ABC", rec="r"):
    segs = []
    for name in draw(st.lists(st.sampled_from(names), min_size=1, max_size=3, unique=True)):
        for _ in range(draw(st.integers(1, 3))):
            start = draw(st.integers(0, 3000)) / 100
            dur = draw(st.integers(1, 500)) / 100
            segs.append(Turn(name, start, round(start + dur, 2)))
    return Annotation(rec, segs)


def frame_der(ref, hyp, cell=0.01):
    """Collar-free counting oracle for grid-aligned annotations."""
    end = max(t.end for t in ref.segments + hyp.segments)
    t = (np.arange(int(round(end / cell)) + 1) + 0.5) * cell

    def act(ann):
        names = sorted({s.speaker for s in ann.segments})
        out = np.zeros((len(t), max(len(names), 1)), int)
        for s in ann.segments:
            out[(t > s.start) & (t < s.end), names.index(s.speaker)] = 1
        return out

    R, H = act(ref), act(hyp)
    size = max(R.shape[1], H.shape[1])
    ov = np.zeros((size, size), int)
    ov[:R.shape[1], :H.shape[1]] = R.T @ H
    best = max(sum(ov[i, p[i]] for i in range(size)) for p in itertools.permutations(range(size)))
    nr, nh = R.sum(1), H.sum(1)
    err = np.maximum(nr - nh, 0).sum() + np.maximum(nh - nr, 0).sum() + np.minimum(nr, nh).sum() - best
    return err / nr.sum()


class TestRttm:
    def test_parse_line(self):
        (ann,) = parse_rttm("SPEAKER rec1 1 0.000 10.000 <NA> <NA> A <NA> <NA>\n")
        assert ann.recording_id == "rec1" and ann.segments == [Turn("A", 0.0, 10.0)]

    def test_short_line(self):
        with pytest.raises(RttmError) as info:
            parse_rttm("SPEAKER r 1 0.0 1.0 <NA> <NA> A <NA> <NA>\nSPEAKER r 1 0.0 1.0\n")
        assert info.value.lineno == 2

    def test_skips_comments_and_other_types(self):
        text = ";; header\n# x\nSPKR-INFO r 1 <NA> <NA> <NA> unknown A <NA> <NA>\n"
        assert parse_rttm(text) == []

    def test_negative_duration(self):
        with pytest.raises(RttmError):
            parse_rttm("SPEAKER r 1 1.0 -1.0 <NA> <NA> A <NA> <NA>\n")

    def test_emit_format(self):
        text = emit_rttm(Annotation("r", [Turn("B", 1.5, 2.0), Turn("A", 0.25, 1.0)]))
        assert text.splitlines()[0] == "SPEAKER r 1 0.250 0.750 <NA> <NA> A <NA> <NA>"

    @settings(max_examples=100, deadline=None)
    @given(annotations())
    def test_roundtrip(self, ann):
        (back,) = parse_rttm(emit_rttm(ann))
        assert back.normalized() == ann.normalized()


class TestHungarian:
    def test_swap(self):
        m = optimal_assignment(np.array([[1.0, 2.0], [2.0, 1.0]]))
        assert m == {0: 1, 1: 0}

    def test_scalar(self):
        assert optimal_assignment(np.array([[5.0]])) == {0: 0}

    def test_rectangular(self):
        W = np.array([[1.0, 9.0, 0.0]])
        assert optimal_assignment(W) == {0: 1}
        assert optimal_assignment(W.T) == {1: 0}

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 6), st.integers(0, 2**31 - 1))
    def test_min_cost_matches_brute_force(self, n, seed):
        C = np.random.default_rng(seed).normal(size=(n, n))
        cols = hungarian(C)
        best = min(sum(C[i, p[i]] for i in range(n)) for p in itertools.permutations(range(n)))
        assert sorted(cols.tolist()) == list(range(n))
        assert sum(C[i, cols[i]] for i in range(n)) == pytest.approx(best, abs=1e-9)

    def test_non_finite(self):
        with pytest.raises(ValueError):
            optimal_assignment(np.array([[np.inf]]))


class TestDer:
    ref = Annotation("r", [Turn("A", 0.0, 10.0)])

    def test_self(self):
        assert compute_der(self.ref, self.ref).der == 0.0

    def test_empty_hypothesis(self):
        rep = compute_der(self.ref, Annotation("r"))
        assert (rep.miss_s, rep.scored_speech_s, rep.der) == pytest.approx((9.5, 9.5, 1.0), abs=1e-12)

    def test_partial_hypothesis(self):
        rep = compute_der(self.ref, Annotation("r", [Turn("X", 0.0, 8.0)]))
        assert rep.miss_s == pytest.approx(1.75, abs=1e-12)
        assert rep.der == pytest.approx(0.1842, abs=1e-4)
        assert rep.mapping == {"A": "X"}

    def test_overlap_exclusion(self):
        ref = Annotation("r", [Turn("A", 0.0, 10.0), Turn("B", 5.0, 15.0)])
        hyp = Annotation("r", [Turn("X", 0.0, 10.0)])
        rep = compute_der(ref, hyp, 0.0, score_overlap=False)
        assert rep.scored_speech_s == pytest.approx(10.0)
        assert rep.miss_s == pytest.approx(5.0)

    def test_false_alarm(self):
        rep = compute_der(self.ref, Annotation("r", [Turn("X", 0.0, 10.0), Turn("Y", 2.0, 4.0)]), 0.0)
        assert rep.falarm_s == pytest.approx(2.0)

    def test_nothing_to_score(self):
        with pytest.raises(UndefinedDerError):
            compute_der(Annotation("r", [Turn("A", 0.0, 0.4)]), Annotation("r"))

    def test_recording_mismatch(self):
        with pytest.raises(ValueError):
            compute_der(self.ref, Annotation("other"))

    @settings(max_examples=60, deadline=None)
    @given(annotations(), annotations(names="xyz"))
    def test_grid_oracle_without_collar(self, ref, hyp):
        assert compute_der(ref, hyp, 0.0).der == pytest.approx(frame_der(ref, hyp), abs=1e-9)

    @settings(max_examples=60, deadline=None)
    @given(annotations(), annotations(names="xyz"))
    def test_renaming_and_splitting_invariance(self, ref, hyp):
        base = compute_der(ref, hyp, 0.0).der
        renamed = Annotation("r", [Turn(s.speaker.upper() + "_", s.start, s.end) for s in hyp.segments])
        split = []
        for s in hyp.segments:
            mid = round((s.start + s.end) / 2, 3)
            split.extend([Turn(s.speaker, s.start, mid), Turn(s.speaker, mid, s.end)] if s.start < mid < s.end else [s])
        assert compute_der(ref, renamed, 0.0).der == pytest.approx(base, abs=1e-12)
        assert compute_der(ref, Annotation("r", split), 0.0).der == pytest.approx(base, abs=1e-12)

    def test_single_speaker_bound(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            hyp = Annotation("r", [Turn("x", float(a), float(a) + 1.0) for a in rng.uniform(0, 12, 4)])
            rep = compute_der(self.ref, hyp)
            assert rep.miss_s + rep.confusion_s <= rep.scored_speech_s + 1e-12


def test_merge_turns():
    merged = merge_turns([Turn("A", 0, 1), Turn("A", 1, 2), Turn("B", 0.5, 1), Turn("A", 3, 4)])
    assert merged == [Turn("A", 0, 2), Turn("B", 0.5, 1), Turn("A", 3, 4)]


def test_table_has_overall():
    rep = compute_der(TestDer.ref, TestDer.ref)
    table = format_der_table([("a", rep), ("b", rep)])
    assert "OVERALL" in table and "0.00" in table
