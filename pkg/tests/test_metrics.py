"""Metric tests: hand-computed confusion fixtures, zero-division policy,
macro averaging consistency, and the two-sample Z-test."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from xmf.errors import DataError, DegenerateInputError
from xmf.metrics import ConfusionMatrix, class_metrics, macro_f1, overall_accuracy, summarize, tally, two_sample_z


class TestTally:
    def test_identity_diagonal(self):
        cm = tally([0, 1, 2], [0, 1, 2])
        np.testing.assert_array_equal(cm.counts, np.eye(3, dtype=np.int64))

    def test_empty_lists(self):
        cm = tally([], [])
        np.testing.assert_array_equal(cm.counts, np.zeros((3, 3), dtype=np.int64))

    def test_hand_tally(self):
        cm = tally([0, 0, 1], [0, 1, 1])
        expected = np.zeros((3, 3), dtype=np.int64)
        expected[0, 0] = 1
        expected[0, 1] = 1
        expected[1, 1] = 1
        np.testing.assert_array_equal(cm.counts, expected)

    def test_length_mismatch(self):
        with pytest.raises(DataError, match="length"):
            tally([0, 1], [0])

    def test_out_of_range_class(self):
        with pytest.raises(DataError):
            tally([0, 3], [0, 0])


class TestClassMetrics:
    def test_perfect_diagonal(self):
        cm = tally([0, 1, 2, 0], [0, 1, 2, 0])
        for c in range(3):
            assert class_metrics(cm, c) == (1.0, 1.0, 1.0, 1.0)

    def test_all_predicted_class_zero(self):
        # truths one of each, predictions all 0: class 0 has TP=1, FP=2, FN=0
        cm = tally([0, 1, 2], [0, 0, 0])
        accuracy, precision, recall, f1 = class_metrics(cm, 0)
        np.testing.assert_allclose(precision, 1 / 3)
        np.testing.assert_allclose(recall, 1.0)
        np.testing.assert_allclose(f1, 0.5)

    def test_absent_class_zero_division_policy(self):
        # class 2 never true and never predicted: precision 0, recall 0,
        # f1 0 by convention, accuracy 1 (all its one-vs-rest calls correct)
        cm = tally([0, 1], [0, 1])
        accuracy, precision, recall, f1 = class_metrics(cm, 2)
        assert (accuracy, precision, recall, f1) == (1.0, 0.0, 0.0, 0.0)

    def test_metrics_bounded(self):
        rng = np.random.default_rng(0)
        for _ in range(30):
            cm = ConfusionMatrix(rng.integers(0, 20, size=(3, 3)))
            assert 0.0 <= overall_accuracy(cm) <= 1.0
            for c in range(3):
                for value in class_metrics(cm, c):
                    assert 0.0 <= value <= 1.0


class TestMacroF1:
    def test_perfect(self):
        assert macro_f1(tally([0, 1, 2], [0, 1, 2])) == 1.0

    def test_all_predict_zero_on_balanced_truths(self):
        # (0.5 + 0 + 0) / 3
        value = macro_f1(tally([0, 1, 2], [0, 0, 0]))
        assert abs(value - 0.1667) < 1e-4

    def test_compositional_consistency(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            cm = ConfusionMatrix(rng.integers(0, 15, size=(3, 3)))
            mean_of_classes = np.mean([class_metrics(cm, c)[3] for c in range(3)])
            assert abs(macro_f1(cm) - mean_of_classes) < 1e-12

    @given(st.permutations([0, 1, 2]), st.integers(0, 2**31 - 1))
    def test_permutation_invariance(self, perm, seed):
        rng = np.random.default_rng(seed)
        truths = rng.integers(0, 3, size=30)
        preds = rng.integers(0, 3, size=30)
        mapped = np.array(perm)
        base = macro_f1(tally(truths, preds))
        relabeled = macro_f1(tally(mapped[truths], mapped[preds]))
        assert abs(base - relabeled) < 1e-12


class TestSummarize:
    def test_keys_and_ranges(self):
        out = summarize(tally([0, 1, 2, 2], [0, 1, 1, 2]))
        assert set(out) == {"accuracy", "precision", "recall", "f1"}
        assert all(0.0 <= v <= 1.0 for v in out.values())

    def test_accuracy_is_trace_over_total(self):
        cm = tally([0, 0, 1, 2], [0, 1, 1, 2])
        assert summarize(cm)["accuracy"] == 0.75


class TestTwoSampleZ:
    def test_identical_samples(self):
        z, p = two_sample_z([0.1, 0.2, 0.3], [0.1, 0.2, 0.3])
        assert z == 0.0 and p == 1.0

    def test_planted_separation(self):
        a = [1.0] * 50 + [0.9] * 50
        b = [0.5] * 100
        z, p = two_sample_z(a, b)
        # closed form: mean gap 0.45, var_b = 0, var_a = 0.0025 * 100/99
        expected_z = 0.45 / math.sqrt(np.var(a, ddof=1) / 100)
        np.testing.assert_allclose(z, expected_z, rtol=1e-12)
        assert p < 1e-6

    def test_sign_antisymmetry(self):
        rng = np.random.default_rng(2)
        a, b = rng.normal(0.6, 0.1, 40), rng.normal(0.5, 0.1, 40)
        za, pa = two_sample_z(a, b)
        zb, pb = two_sample_z(b, a)
        np.testing.assert_allclose(za, -zb, rtol=1e-12)
        np.testing.assert_allclose(pa, pb, rtol=1e-12)

    def test_short_samples_rejected(self):
        with pytest.raises(DegenerateInputError):
            two_sample_z([1.0], [0.5, 0.6])

    def test_zero_pooled_variance_rejected(self):
        with pytest.raises(DegenerateInputError, match="variance"):
            two_sample_z([0.5, 0.5], [0.7, 0.7])

    def test_p_matches_normal_tail(self):
        # p = erfc(|z| / sqrt(2)); spot-check the standard value at z = 1.96
        a = np.array([0.0, 2.0])  # mean 1, var 2
        b = np.array([-1.0, 1.0])  # mean 0, var 2
        z, p = two_sample_z(a, b)
        np.testing.assert_allclose(p, math.erfc(abs(z) / math.sqrt(2)), rtol=1e-15)
        np.testing.assert_allclose(math.erfc(1.959963984540054 / math.sqrt(2)), 0.05, atol=1e-9)


class TestConfusionMatrixValidation:
    def test_wrong_shape(self):
        with pytest.raises(DataError):
            ConfusionMatrix(np.zeros((2, 2)))

    def test_negative_counts(self):
        with pytest.raises(DataError):
            ConfusionMatrix(np.array([[1, 0, 0], [0, -1, 0], [0, 0, 1]]))
