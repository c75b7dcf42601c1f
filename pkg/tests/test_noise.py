"""The soft blend and the three-way correction rule."""

import numpy as np
import pytest

from mopro.errors import ConfigError, ContractViolationError, DimensionError
from mopro.noise import (
    OOD,
    PseudoLabel,
    Rule,
    correct_batch,
    hard_pseudo_label,
    soft_pseudo_label,
)
from mopro.numkit import Rng


def random_q(rng, k):
    raw = rng.random(k) + 1e-9
    return raw / raw.sum()


class TestSoftPseudoLabel:
    def test_even_blend(self):
        q = soft_pseudo_label([0.8, 0.2], [0.6, 0.4], 0.5)
        np.testing.assert_allclose(q, [0.7, 0.3], atol=1e-12)

    def test_alpha_one_returns_classifier_exactly(self):
        p = np.array([0.75, 0.2, 0.05])
        np.testing.assert_array_equal(soft_pseudo_label(p, [0.1, 0.1, 0.8], 1.0), p)

    def test_alpha_zero_returns_scores_exactly(self):
        s = np.array([0.1, 0.1, 0.8])
        np.testing.assert_array_equal(soft_pseudo_label([0.5, 0.3, 0.2], s, 0.0), s)

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            soft_pseudo_label([0.5, 0.5], [1.0 / 3] * 3, 0.5)

    def test_alpha_out_of_range(self):
        with pytest.raises(ConfigError):
            soft_pseudo_label([1.0], [1.0], 1.5)

    def test_invalid_probability_vector(self):
        with pytest.raises(ContractViolationError):
            soft_pseudo_label([0.9, 0.9], [0.5, 0.5], 0.5)

    def test_result_always_sums_to_one(self):
        rng = Rng(0)
        for _ in range(100):
            k = int(rng.integers(2, 8))
            q = soft_pseudo_label(random_q(rng, k), random_q(rng, k), float(rng.random()))
            assert abs(q.sum() - 1.0) <= 1e-9
            assert (q >= 0).all()


class TestHardPseudoLabel:
    def test_confident_argmax_wins(self):
        pl = hard_pseudo_label([0.05, 0.85, 0.05, 0.05], y=2, threshold=0.8)
        assert pl == PseudoLabel(1, Rule.ARGMAX)

    def test_original_label_above_uniform_is_kept(self):
        pl = hard_pseudo_label([0.4, 0.3, 0.2, 0.1], y=1, threshold=0.8)
        assert pl == PseudoLabel(1, Rule.KEEP_ORIGINAL)

    def test_uniform_score_is_ood_by_strict_inequality(self):
        for y in range(4):
            pl = hard_pseudo_label([0.25, 0.25, 0.25, 0.25], y=y, threshold=0.8)
            assert pl.is_ood and pl.rule is Rule.OOD

    def test_threshold_boundary_is_strict(self):
        # max q exactly at the threshold falls through to rule 2
        pl = hard_pseudo_label([0.8, 0.15, 0.05], y=0, threshold=0.8)
        assert pl.rule is Rule.KEEP_ORIGINAL

    def test_argmax_tie_takes_lowest_class(self):
        pl = hard_pseudo_label([0.45, 0.45, 0.1], y=2, threshold=0.4)
        assert pl.label == 0 and pl.rule is Rule.ARGMAX

    def test_threshold_above_one_disables_rule_one(self):
        rng = Rng(1)
        for _ in range(200):
            q = random_q(rng, 5)
            pl = hard_pseudo_label(q, y=int(rng.integers(0, 5)), threshold=1.01)
            assert pl.rule is not Rule.ARGMAX

    def test_threshold_at_or_below_uniform_makes_rule_one_total(self):
        rng = Rng(2)
        for _ in range(200):
            q = random_q(rng, 5)
            pl = hard_pseudo_label(q, y=int(rng.integers(0, 5)), threshold=1 / 5)
            assert pl.rule is Rule.ARGMAX

    def test_monotone_in_threshold(self):
        # raising T never moves a sample out of OOD; lowering it never
        # shrinks the argmax set
        rng = Rng(3)
        for _ in range(300):
            q = random_q(rng, 6)
            y = int(rng.integers(0, 6))
            lo, hi = sorted(rng.random(2))
            a, b = hard_pseudo_label(q, y, lo), hard_pseudo_label(q, y, hi)
            if a.rule is Rule.OOD:
                assert b.rule is Rule.OOD
            if b.rule is Rule.ARGMAX:
                assert a.rule is Rule.ARGMAX

    def test_deterministic_including_provenance(self):
        q = [0.3, 0.3, 0.4]
        assert hard_pseudo_label(q, 1, 0.8) == hard_pseudo_label(q, 1, 0.8)

    def test_label_out_of_range(self):
        with pytest.raises(ContractViolationError):
            hard_pseudo_label([0.5, 0.5], y=2, threshold=0.8)

    def test_exactly_one_rule_fires(self):
        rng = Rng(4)
        for _ in range(500):
            k = int(rng.integers(2, 7))
            pl = hard_pseudo_label(random_q(rng, k), int(rng.integers(0, k)),
                                   float(rng.random()))
            assert (pl.label is None) == (pl.rule is Rule.OOD)
            if pl.label is not None:
                assert 0 <= pl.label < k


class TestCorrectBatch:
    def test_all_confident_batch(self):
        p = np.array([[0.9, 0.1], [0.1, 0.9]])
        out = correct_batch(p, p, np.array([1, 0]), alpha=0.5, threshold=0.8)
        np.testing.assert_array_equal(out.labels, [0, 1])
        assert out.n_argmax == 2 and out.n_ood == 0

    def test_uniform_batch_is_all_ood(self):
        p = np.full((3, 4), 0.25)
        out = correct_batch(p, p, np.array([0, 1, 2]), alpha=0.5, threshold=0.8)
        assert (out.labels == OOD).all() and out.n_ood == 3

    def test_counts_are_exhaustive(self):
        rng = Rng(5)
        p = np.array([random_q(rng, 5) for _ in range(64)])
        s = np.array([random_q(rng, 5) for _ in range(64)])
        out = correct_batch(p, s, rng.integers(0, 5, size=64), 0.5, 0.8)
        assert out.n_argmax + out.n_kept + out.n_ood == 64

    def test_matches_scalar_rule_on_10k_random_tuples(self):
        rng = Rng(6)
        k = 6
        p = np.array([random_q(rng, k) for _ in range(10_000)])
        s = np.array([random_q(rng, k) for _ in range(10_000)])
        y = rng.integers(0, k, size=10_000)
        alpha, threshold = 0.5, 0.8
        out = correct_batch(p, s, y, alpha, threshold)
        for i in range(10_000):
            expected = hard_pseudo_label(
                soft_pseudo_label(p[i], s[i], alpha), int(y[i]), threshold
            )
            got = OOD if expected.is_ood else expected.label
            assert out.labels[i] == got
            assert out.rules[i] == expected.rule

    def test_misaligned_arrays_rejected(self):
        with pytest.raises(DimensionError):
            correct_batch(np.ones((2, 3)) / 3, np.ones((3, 3)) / 3, [0, 1], 0.5, 0.8)
