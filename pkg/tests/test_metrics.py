import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from taskcond.metrics import (
    average_accuracy,
    backward_transfer,
    membership_report,
    tdr_at_fdr,
)

from oracles import tdr_sweep


class TestAverageAccuracy:
    def test_all_hundred(self):
        assert average_accuracy([100.0] * 5) == 100.0

    def test_half(self):
        assert average_accuracy([0.0, 100.0]) == 50.0

    def test_matches_naive_mean(self):
        rng = np.random.default_rng(70)
        v = rng.uniform(0, 100, size=5)
        assert average_accuracy(v) == pytest.approx(sum(v) / 5, rel=1e-12)

    def test_permutation_invariant(self):
        rng = np.random.default_rng(71)
        v = rng.uniform(0, 100, size=6)
        assert average_accuracy(v) == pytest.approx(average_accuracy(v[::-1]), rel=1e-15)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            average_accuracy([])


class TestBackwardTransfer:
    def test_constant_matrix_is_zero(self):
        assert backward_transfer(np.full((3, 3), 80.0)) == 0.0

    def test_two_task_analytic(self):
        R = np.array([[90.0, np.nan], [80.0, 95.0]])
        assert backward_transfer(R) == pytest.approx(-10.0)

    def test_three_task_hand_formula(self):
        rng = np.random.default_rng(72)
        R = rng.uniform(0, 100, size=(3, 3))
        expected = ((R[2, 0] - R[0, 0]) + (R[2, 1] - R[1, 1])) / 2
        assert backward_transfer(R) == pytest.approx(expected, rel=1e-12)

    def test_missing_entries_rejected(self):
        R = np.full((3, 3), np.nan)
        R[0, 0] = 90.0
        with pytest.raises(ValueError, match="missing"):
            backward_transfer(R)


class TestTdrAtFdr:
    def test_perfect_separation(self):
        assert tdr_at_fdr([0.1, 0.2, 0.3], [0.9, 0.95], fdr_target=0.2) == 100.0

    def test_identical_distributions_track_target(self):
        rng = np.random.default_rng(73)
        scores = rng.normal(size=20_000)
        b, a = scores[:10_000], scores[10_000:]
        tdr = tdr_at_fdr(b, a, fdr_target=10.0)
        assert abs(tdr - 10.0) < 2.0

    def test_matches_exhaustive_sweep_oracle(self):
        rng = np.random.default_rng(74)
        for _ in range(30):
            b = rng.normal(size=10).tolist()
            a = rng.normal(loc=rng.uniform(0, 2), size=10).tolist()
            target = float(rng.uniform(0, 40))
            assert tdr_at_fdr(b, a, target) == pytest.approx(tdr_sweep(b, a, target),
                                                             abs=1e-12)

    def test_tie_heavy_scores_match_oracle(self):
        b = [1.0, 2.0, 2.0, 3.0]
        a = [2.0, 3.0, 3.0, 4.0]
        for target in (0.0, 24.9, 25.0, 50.0, 100.0):
            assert tdr_at_fdr(b, a, target) == tdr_sweep(b, a, target)

    @given(st.integers(0, 10_000), st.floats(0.0, 50.0), st.floats(0.0, 50.0))
    @settings(max_examples=60, deadline=None)
    def test_monotone_in_fdr_budget(self, seed, t1, t2):
        rng = np.random.default_rng(seed)
        b = rng.normal(size=15)
        a = rng.normal(loc=0.5, size=15)
        lo, hi = sorted((t1, t2))
        assert tdr_at_fdr(b, a, lo) <= tdr_at_fdr(b, a, hi)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            tdr_at_fdr([], [1.0], 1.0)


class TestMembershipReport:
    def test_one_hot_own_task_is_perfect(self):
        M = np.zeros((12, 3))
        true = np.repeat([0, 1, 2], 4)
        M[np.arange(12), true] = 1.0
        rep = membership_report(M, true, n_tasks=3, bins=10)
        assert rep.accuracy == 100.0
        # all own-task weights land in the top bin
        assert rep.counts_by_task[:, -1].sum() == 12

    def test_uniform_membership_ties_to_lowest_index(self):
        M = np.full((10, 5), 0.2)
        true = np.repeat(np.arange(5), 2)
        rep = membership_report(M, true, n_tasks=5)
        assert rep.accuracy == pytest.approx(20.0)

    def test_zero_bins_still_emitted(self):
        M = np.array([[1.0, 0.0]])
        rep = membership_report(M, np.array([0]), n_tasks=2, bins=4)
        assert rep.counts_by_task.shape == (2, 4)
        assert rep.counts_by_task[1].sum() == 0
