import numpy as np
import pytest

from oracles import eer_oracle
from ppglid.errors import DataError
from ppglid.metrics import (
    MetricsReport,
    ScoreSet,
    accuracy,
    confusion_matrix,
    eer,
    f1,
    make_report,
    multiclass_eer,
)


class TestAccuracy:
    def test_all_correct(self):
        assert accuracy([1, 0, 2], [1, 0, 2]) == 1.0

    def test_count_arithmetic(self):
        assert accuracy([0, 1, 1, 0], [0, 1, 0, 0]) == 0.75

    def test_matches_loop_oracle(self, rng):
        preds = rng.integers(0, 4, size=1000)
        labels = rng.integers(0, 4, size=1000)
        expected = sum(1 for p, l in zip(preds, labels) if p == l) / 1000
        assert accuracy(preds, labels) == expected

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            accuracy([], [])

    def test_permutation_invariant(self, rng):
        preds = rng.integers(0, 3, size=200)
        labels = rng.integers(0, 3, size=200)
        perm = rng.permutation(200)
        assert accuracy(preds, labels) == accuracy(preds[perm], labels[perm])


class TestF1:
    def test_perfect_binary(self):
        per_class, macro = f1([0, 1, 0, 1], [0, 1, 0, 1], 2)
        assert per_class.tolist() == [1.0, 1.0]
        assert macro == 1.0

    def test_absent_class_scores_zero(self):
        per_class, macro = f1([0, 0], [0, 0], 2)
        assert per_class.tolist() == [1.0, 0.0]
        assert macro == 0.5

    def test_worked_example(self):
        # class 0: P=0.5 R=1; class 1: P=1 R=0.5; both F1 = 2/3.
        per_class, macro = f1([0, 0, 1], [0, 1, 1], 2)
        assert np.allclose(per_class, [2 / 3, 2 / 3], atol=1e-12)
        assert abs(macro - 2 / 3) <= 1e-12

    def test_macro_is_unweighted_mean(self, rng):
        preds = rng.integers(0, 3, size=300)
        labels = rng.integers(0, 3, size=300)
        per_class, macro = f1(preds, labels, 3)
        assert macro == pytest.approx(per_class.mean(), abs=1e-15)

    def test_permutation_invariant(self, rng):
        preds = rng.integers(0, 3, size=200)
        labels = rng.integers(0, 3, size=200)
        perm = rng.permutation(200)
        _, macro1 = f1(preds, labels, 3)
        _, macro2 = f1(preds[perm], labels[perm], 3)
        assert macro1 == macro2

    def test_balanced_binary_equivalence(self, rng):
        labels = np.array([0] * 50 + [1] * 50)
        per_class, macro = f1(labels, labels, 2)
        assert macro == 1.0 and accuracy(labels, labels) == 1.0
        preds = labels.copy()
        preds[0] = 1
        _, macro_off = f1(preds, labels, 2)
        assert macro_off < 1.0 and accuracy(preds, labels) < 1.0


class TestConfusion:
    def test_rows_are_true_labels(self):
        mat = confusion_matrix([1, 1, 0], [0, 1, 0], 2)
        assert mat.tolist() == [[1, 1], [0, 1]]

    def test_row_sums_equal_class_counts(self, rng):
        labels = rng.integers(0, 4, size=500)
        preds = rng.integers(0, 4, size=500)
        mat = confusion_matrix(preds, labels, 4)
        assert mat.sum(axis=1).tolist() == np.bincount(labels, minlength=4).tolist()


class TestEer:
    def test_perfect_separation(self):
        s = ScoreSet(np.array([3.0, 2.5, 0.5, 0.1]), np.array([True, True, False, False]))
        assert eer(s) == 0.0

    def test_identical_point_masses(self):
        s = ScoreSet(np.array([1.0, 1.0]), np.array([True, False]))
        assert eer(s) == 0.5

    def test_matches_bruteforce_oracle_on_random_sets(self, rng):
        for _ in range(100):
            n = int(rng.integers(4, 200))
            scores = rng.normal(size=n)
            is_target = rng.random(n) < 0.5
            if is_target.all() or not is_target.any():
                continue
            got = eer(ScoreSet(scores, is_target))
            assert got == pytest.approx(eer_oracle(scores.tolist(), is_target.tolist()), abs=1e-9)

    def test_monotone_transform_invariance(self, rng):
        for _ in range(50):
            scores = rng.normal(size=80)
            is_target = np.arange(80) % 3 == 0
            base = eer(ScoreSet(scores, is_target))
            a, b = float(rng.uniform(0.1, 5.0)), float(rng.normal())
            warped = np.tanh(scores) * a + b  # strictly increasing map
            assert eer(ScoreSet(warped, is_target)) == pytest.approx(base, abs=1e-12)

    def test_negation_swap_symmetry(self, rng):
        for _ in range(50):
            scores = rng.normal(size=60)
            is_target = rng.random(60) < 0.4
            if is_target.all() or not is_target.any():
                continue
            base = eer(ScoreSet(scores, is_target))
            flipped = eer(ScoreSet(-scores, ~is_target))
            assert flipped == pytest.approx(base, abs=1e-12)

    def test_needs_both_trial_kinds(self):
        with pytest.raises(DataError):
            ScoreSet(np.array([1.0, 2.0]), np.array([True, True]))
        with pytest.raises(DataError):
            ScoreSet(np.array([1.0, 2.0]), np.array([False, False]))


class TestMulticlassEer:
    def test_binary_equals_two_class_mean(self, rng):
        probs1 = rng.random(100)
        probs = np.stack([1 - probs1, probs1], axis=1)
        labels = rng.integers(0, 2, size=100)
        direct = eer(ScoreSet(probs[:, 1], labels == 1))
        assert multiclass_eer(probs, labels) == pytest.approx(direct, abs=1e-12)

    def test_one_hot_perfect(self):
        labels = np.array([0, 1, 2, 0, 1, 2])
        probs = np.eye(3)[labels]
        assert multiclass_eer(probs, labels) == 0.0

    def test_three_class_matches_per_class_oracle(self, rng):
        labels = rng.integers(0, 3, size=120)
        probs = rng.dirichlet(np.ones(3), size=120)
        per_class = [
            eer_oracle(probs[:, c].tolist(), (labels == c).tolist()) for c in range(3)
        ]
        assert multiclass_eer(probs, labels) == pytest.approx(np.mean(per_class), abs=1e-9)

    def test_absent_class_is_an_error(self):
        probs = np.full((4, 3), 1 / 3)
        with pytest.raises(DataError, match="class 2"):
            multiclass_eer(probs, np.array([0, 1, 0, 1]))

    def test_skip_absent_opt_in(self):
        probs = np.eye(3)[[0, 1, 0, 1]]
        assert multiclass_eer(probs, np.array([0, 1, 0, 1]), skip_absent=True) == 0.0


class TestReport:
    def test_perfect_two_class_run(self):
        labels = np.array([0, 1, 0, 1])
        probs = np.eye(2)[labels]
        report = make_report(labels, probs, labels)
        assert report.accuracy == 1.0
        assert report.f1_macro == 1.0
        assert report.eer == 0.0
        assert report.n == 4

    def test_confusion_row_sums_are_class_counts(self, rng):
        labels = rng.integers(0, 3, size=90)
        preds = rng.integers(0, 3, size=90)
        probs = rng.dirichlet(np.ones(3), size=90)
        report = make_report(preds, probs, labels)
        rows = [sum(r) for r in report.confusion]
        assert rows == np.bincount(labels, minlength=3).tolist()

    def test_json_round_trip(self, rng):
        labels = rng.integers(0, 2, size=40)
        preds = rng.integers(0, 2, size=40)
        probs1 = rng.random(40)
        probs = np.stack([1 - probs1, probs1], axis=1)
        report = make_report(preds, probs, labels)
        assert MetricsReport.from_json(report.to_json()) == report

    def test_absent_class_flagged(self):
        labels = np.array([0, 0, 1, 1])
        probs = np.eye(3)[[0, 0, 1, 1]]
        report = make_report(np.array([0, 0, 1, 1]), probs, labels)
        assert report.metadata["absent_classes"] == [2]
        assert report.f1_per_class[2] == 0.0
