"""Edit-distance alignment, error rates, hour accounting, and reports."""

import numpy as np
import pytest

from asrsel.corpus import (
    HypothesisRecord,
    PerturbationDescriptor,
    SelectionEntry,
    SelectionResult,
    UtteranceRecord,
)
from asrsel.errors import DataFormatError
from asrsel.metrics import (
    cer,
    edit_distance_units,
    evaluate_subset,
    hours,
    sweep_report,
    wer,
)

from oracles import recursive_edit_distance

BASE = PerturbationDescriptor.baseline()


class TestEditDistance:
    def test_identical(self):
        br = edit_distance_units("the cat sat".split(), "the cat sat".split())
        assert (br.substitutions, br.deletions, br.insertions) == (0, 0, 0)
        assert br.rate == 0.0

    def test_single_deletion(self):
        br = edit_distance_units("the cat sat".split(), "the cat".split())
        assert br.deletions == 1
        assert br.rate == pytest.approx(1 / 3)

    def test_sub_plus_insert(self):
        br = edit_distance_units(["a"], ["b", "c"])
        assert br.substitutions == 1
        assert br.insertions == 1
        assert br.rate == pytest.approx(2.0)

    def test_empty_reference_rate_undefined(self):
        br = edit_distance_units([], ["x", "y"])
        assert br.rate is None
        assert br.insertions == 2

    def test_self_distance_zero_property(self):
        rng = np.random.default_rng(0)
        for _ in range(30):
            seq = list(rng.integers(0, 4, size=rng.integers(0, 10)))
            assert edit_distance_units(seq, seq).errors == 0

    def test_matches_exhaustive_recursion(self):
        rng = np.random.default_rng(1)
        for _ in range(150):
            a = list(rng.integers(0, 3, size=rng.integers(0, 8)))
            b = list(rng.integers(0, 3, size=rng.integers(0, 8)))
            assert edit_distance_units(a, b).errors == recursive_edit_distance(a, b)

    def test_triangle_inequality(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            a, b, c = (
                list(rng.integers(0, 3, size=rng.integers(0, 7))) for _ in range(3)
            )
            ab = edit_distance_units(a, b).errors
            bc = edit_distance_units(b, c).errors
            ac = edit_distance_units(a, c).errors
            assert ac <= ab + bc

    def test_swap_symmetry(self):
        rng = np.random.default_rng(3)
        for _ in range(60):
            a = list(rng.integers(0, 3, size=rng.integers(0, 7)))
            b = list(rng.integers(0, 3, size=rng.integers(0, 7)))
            fwd = edit_distance_units(a, b)
            rev = edit_distance_units(b, a)
            assert fwd.substitutions == rev.substitutions
            assert fwd.deletions == rev.insertions
            assert fwd.insertions == rev.deletions


class TestWer:
    def test_interior_whitespace_collapses(self):
        assert wer("a  b c", "a b  c").rate == 0.0

    def test_case_preserved(self):
        br = wer("Hello", "hello")
        assert br.substitutions == 1

    def test_case_folded_with_normalize(self):
        assert wer("Hello", "hello", normalize=True).rate == 0.0

    def test_empty_hypothesis_all_deletions(self):
        br = wer("one two three", "")
        assert br.deletions == 3
        assert br.rate == 1.0


class TestCer:
    def test_identical(self):
        assert cer("abc", "abc").rate == 0.0

    def test_one_char(self):
        assert cer("abc", "abd").rate == pytest.approx(1 / 3)

    def test_empty_hypothesis(self):
        assert cer("ab", "").rate == 1.0

    def test_space_counts_as_character(self):
        br = cer("a b", "ab")
        assert br.ref_len == 3
        assert br.errors == 1


class TestHours:
    def _manifest(self, durations):
        return [UtteranceRecord("u%d" % i, d) for i, d in enumerate(durations)]

    def _subset(self, entries):
        return SelectionResult(rule="random", entries=entries)

    def test_two_half_hours(self):
        man = self._manifest([1800.0, 1800.0])
        res = self._subset([SelectionEntry("u0", "h", "x"), SelectionEntry("u1", "h", "x")])
        assert hours(res, man) == pytest.approx(1.0)

    def test_weight_two_counts_twice(self):
        man = self._manifest([3600.0])
        res = SelectionResult(
            rule="conf_stable", entries=[SelectionEntry("u0", "h", "x", weight=2)]
        )
        assert hours(res, man) == pytest.approx(2.0)

    def test_empty_subset(self):
        assert hours(self._subset([]), self._manifest([10.0])) == 0.0

    def test_missing_duration(self):
        with pytest.raises(DataFormatError, match="duration"):
            hours(self._subset([SelectionEntry("nope", "h", "x")]), self._manifest([1.0]))


class TestSweep:
    def _inputs(self, base_texts, pert_texts, refs, desc=None):
        desc = desc or PerturbationDescriptor(0.01, 0, 1.0)
        manifest = [
            UtteranceRecord("u%d" % i, 1.0, ref_text=r) for i, r in enumerate(refs)
        ]
        hyps = []
        for i, (b, p) in enumerate(zip(base_texts, pert_texts)):
            hyps.append(HypothesisRecord("u%d" % i, "u%d-h0" % i, b, BASE))
            hyps.append(HypothesisRecord("u%d" % i, "u%d-h1" % i, p, desc))
        return manifest, hyps

    def test_no_change_zero_rate(self):
        manifest, hyps = self._inputs(["a b"], ["a b"], ["a b"])
        report = sweep_report(manifest, hyps)
        assert report.configs[0].improvement_rate == 0.0
        assert not report.configs[0].retained

    def test_half_improved_mean_reduction(self):
        # Baseline WERs [0.5, 0.5]; perturbed [0.4, 0.6] -> rate 0.5,
        # mean reduction 0.1 over the improved utterance.
        refs = ["w1 w2 w3 w4 w5 w6 w7 w8 w9 w10"] * 2
        base = ["x1 x2 x3 x4 x5 w6 w7 w8 w9 w10"] * 2  # 5 subs = 0.5
        pert = [
            "x1 x2 x3 x4 w5 w6 w7 w8 w9 w10",  # 4 subs = 0.4
            "x1 x2 x3 x4 x5 x6 w7 w8 w9 w10",  # 6 subs = 0.6
        ]
        manifest, hyps = self._inputs(base, pert, refs)
        cfg = sweep_report(manifest, hyps).configs[0]
        assert cfg.improvement_rate == pytest.approx(0.5)
        assert cfg.mean_wer_reduction == pytest.approx(0.1)

    def test_retention_boundary_inclusive(self):
        refs = ["a b c d e"] * 100
        base = ["x b c d e"] * 100  # WER 0.2 everywhere

        def inputs_with_rate(k):
            pert = ["a b c d e"] * k + ["x b c d e"] * (100 - k)
            return self._inputs(base, pert, refs)

        assert not sweep_report(*inputs_with_rate(19)).configs[0].retained
        assert sweep_report(*inputs_with_rate(20)).configs[0].retained

    def test_missing_reference_rejected(self):
        manifest = [UtteranceRecord("u0", 1.0)]
        hyps = [HypothesisRecord("u0", "h", "x", BASE)]
        with pytest.raises(DataFormatError, match="ref_text"):
            sweep_report(manifest, hyps)


class TestEvaluate:
    def test_all_correct(self):
        man = [UtteranceRecord("u0", 60.0, ref_text="a b")]
        res = SelectionResult(rule="random", entries=[SelectionEntry("u0", "h", "a b")])
        rep = evaluate_subset(res, man)
        assert rep["corpus_wer"] == 0.0

    def test_pooled_not_averaged(self):
        man = [
            UtteranceRecord("u0", 1.0, ref_text="a"),
            UtteranceRecord("u1", 1.0, ref_text="x y z"),
        ]
        res = SelectionResult(
            rule="random",
            entries=[
                SelectionEntry("u0", "h", "b"),      # 1 error / 1 word
                SelectionEntry("u1", "h", "x y z"),  # 0 / 3
            ],
        )
        rep = evaluate_subset(res, man)
        # Pooled 1/4; a per-utterance mean would say 0.5.
        assert rep["corpus_wer"] == pytest.approx(0.25)

    def test_two_utterance_pooled_value(self):
        man = [
            UtteranceRecord("u0", 1.0, ref_text="a b"),
            UtteranceRecord("u1", 1.0, ref_text="c d"),
        ]
        res = SelectionResult(
            rule="random",
            entries=[SelectionEntry("u0", "h", "a x"), SelectionEntry("u1", "h", "c d")],
        )
        assert evaluate_subset(res, man)["corpus_wer"] == pytest.approx(0.25)

    def test_coverage_mismatch(self):
        man = [UtteranceRecord("u0", 1.0, ref_text="a")]
        res = SelectionResult(rule="random", entries=[SelectionEntry("zz", "h", "a")])
        with pytest.raises(DataFormatError, match="reference"):
            evaluate_subset(res, man)
