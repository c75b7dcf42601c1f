"""Loss terms: hand values, masking semantics, and gradient correctness."""

import math

import numpy as np
import pytest

from mopro import numkit as nk, objectives as obj
from mopro.errors import ContractViolationError, StateError
from mopro.memory import EmbeddingQueue, PrototypeBank
from mopro.noise import OOD
from mopro.numkit import Rng


def unit_rows(rng, n, d):
    z = rng.standard_normal((n, d))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def make_bank(protos):
    bank = PrototypeBank(protos.shape[0], protos.shape[1], 0.999)
    bank.init_prototypes(protos, np.arange(protos.shape[0]))
    return bank


def make_queue(rows):
    q = EmbeddingQueue(rows.shape[0], rows.shape[1])
    q.enqueue(rows)
    return q


class TestLossProto:
    def test_hand_value_aligned_vs_orthogonal(self):
        bank = make_bank(np.array([[1.0, 0.0], [0.0, 1.0]]))
        loss = obj.loss_proto(nk.Tensor([1.0, 0.0]), bank, 0, temperature=1.0)
        assert loss.item() == pytest.approx(-math.log(math.e / (math.e + 1)), abs=1e-12)

    def test_equidistant_gives_log_k(self):
        protos = np.eye(4)
        bank = make_bank(protos)
        z = np.ones(4) / 2.0
        loss = obj.loss_proto(nk.Tensor(z), bank, 2, temperature=0.3)
        assert loss.item() == pytest.approx(math.log(4), abs=1e-12)

    def test_ood_input_rejected(self):
        bank = make_bank(np.eye(2))
        with pytest.raises(ContractViolationError):
            obj.loss_proto(nk.Tensor([1.0, 0.0]), bank, None, temperature=0.1)

    def test_gradient_matches_finite_differences(self):
        rng = Rng(0)
        bank = make_bank(unit_rows(rng, 3, 5))
        z = nk.Tensor(rng.standard_normal(5), requires_grad=True)
        err = nk.check_gradient(lambda t: obj.loss_proto(t, bank, 1, 0.2), z)
        assert err <= 1e-6


class TestLossInst:
    def test_hand_value_single_negative(self):
        q = make_queue(np.array([[0.0, 1.0, 0.0]]))
        loss = obj.loss_inst(
            nk.Tensor([1.0, 0.0, 0.0]), np.array([1.0, 0.0, 0.0]), q, temperature=1.0
        )
        assert loss.item() == pytest.approx(-math.log(math.e / (math.e + 1)), abs=1e-12)

    def test_identical_positive_and_negatives_give_log_r_plus_one(self):
        z = np.array([1.0, 0.0])
        q = make_queue(np.tile(z, (7, 1)))
        loss = obj.loss_inst(nk.Tensor(z), z, q, temperature=0.5)
        assert loss.item() == pytest.approx(math.log(8), abs=1e-12)

    def test_underfilled_queue_is_a_state_error(self):
        q = EmbeddingQueue(4, 2)
        q.enqueue(np.array([[1.0, 0.0]]))
        with pytest.raises(StateError, match="1/4"):
            obj.loss_inst(nk.Tensor([1.0, 0.0]), np.array([1.0, 0.0]), q, 0.1)

    def test_gradient_matches_finite_differences(self):
        rng = Rng(1)
        q = make_queue(unit_rows(rng, 6, 4))
        pos = unit_rows(rng, 1, 4)[0]
        z = nk.Tensor(rng.standard_normal(4), requires_grad=True)
        err = nk.check_gradient(lambda t: obj.loss_inst(t, pos, q, 0.2), z)
        assert err <= 1e-6


class TestLossCe:
    def test_perfect_prediction_is_zero(self):
        assert obj.loss_ce(nk.Tensor([1.0, 0.0]), 0).item() == 0.0

    def test_half_probability_is_ln_two(self):
        loss = obj.loss_ce(nk.Tensor([0.5, 0.5]), 1)
        assert loss.item() == pytest.approx(math.log(2), abs=1e-12)

    def test_uniform_is_log_k(self):
        loss = obj.loss_ce(nk.Tensor(np.full(5, 0.2)), 3)
        assert loss.item() == pytest.approx(math.log(5), abs=1e-12)

    def test_zero_probability_clamps_and_counts(self):
        obj.numeric_warnings.reset()
        loss = obj.loss_ce(nk.Tensor([1.0, 0.0]), 1)
        assert loss.item() == pytest.approx(-math.log(obj.CE_PROB_FLOOR), rel=1e-9)
        assert obj.numeric_warnings.count == 1
        obj.numeric_warnings.reset()


class TestLossTotal:
    def batch(self, seed=0, n=6, k=3, d=4, r=8):
        rng = Rng(seed)
        p = nk.Tensor(np.exp(rng.standard_normal((n, k))))
        p = nk.softmax_rows(nk.Tensor(rng.standard_normal((n, k))))
        z = nk.l2_normalize(nk.Tensor(rng.standard_normal((n, d))))
        z_mom = unit_rows(rng, n, d)
        bank = make_bank(unit_rows(rng, k, d))
        queue = make_queue(unit_rows(rng, r, d))
        return p, z, z_mom, bank, queue

    def test_all_ood_batch_leaves_only_the_instance_term(self):
        p, z, z_mom, bank, queue = self.batch()
        labels = np.full(6, OOD)
        breakdown, total = obj.loss_total(
            p, z, z_mom, labels, bank, queue, temperature=0.2,
            lambda_pro=1.0, lambda_ins=2.0,
        )
        assert breakdown.l_ce == 0.0 and breakdown.l_pro == 0.0
        assert breakdown.l_ins > 0.0
        assert breakdown.total == pytest.approx(2.0 * breakdown.l_ins, abs=1e-15)
        assert total.item() == pytest.approx(breakdown.total, abs=1e-15)

    def test_clean_batch_activates_every_term(self):
        p, z, z_mom, bank, queue = self.batch()
        labels = np.array([0, 1, 2, 0, 1, 2])
        breakdown, _ = obj.loss_total(
            p, z, z_mom, labels, bank, queue, temperature=0.2
        )
        assert breakdown.l_ce > 0 and breakdown.l_pro > 0 and breakdown.l_ins > 0
        assert breakdown.total == pytest.approx(
            breakdown.l_ce + breakdown.l_pro + breakdown.l_ins, abs=1e-15
        )

    def test_mixed_batch_matches_per_sample_oracle(self):
        """OOD rows leave CE and the prototype term, never the instance term."""
        p, z, z_mom, bank, queue = self.batch(seed=3)
        labels = np.array([0, OOD, 2, 1, OOD, 0])
        breakdown, _ = obj.loss_total(
            p, z, z_mom, labels, bank, queue, temperature=0.2,
            lambda_pro=0.7, lambda_ins=1.3,
        )
        in_dist = labels >= 0
        ce_terms, pro_terms, ins_terms = [], [], []
        for i in range(6):
            if in_dist[i]:
                ce_terms.append(obj.loss_ce(nk.Tensor(p.data[i]), int(labels[i])).item())
                pro_terms.append(
                    obj.loss_proto(nk.Tensor(z.data[i]), bank, int(labels[i]), 0.2).item()
                )
            ins_terms.append(
                obj.loss_inst(nk.Tensor(z.data[i]), z_mom[i], queue, 0.2).item()
            )
        assert breakdown.l_ce == pytest.approx(np.mean(ce_terms), abs=1e-12)
        assert breakdown.l_pro == pytest.approx(np.mean(pro_terms), abs=1e-12)
        assert breakdown.l_ins == pytest.approx(np.mean(ins_terms), abs=1e-12)
        assert breakdown.total == pytest.approx(
            np.mean(ce_terms) + 0.7 * np.mean(pro_terms) + 1.3 * np.mean(ins_terms),
            abs=1e-12,
        )

    def test_cold_queue_zeroes_the_instance_term(self):
        p, z, z_mom, bank, _ = self.batch()
        cold = EmbeddingQueue(16, 4)
        breakdown, _ = obj.loss_total(
            p, z, z_mom, np.array([0, 1, 2, 0, 1, 2]), bank, cold, temperature=0.2
        )
        assert breakdown.l_ins == 0.0

    def test_zero_weights_reproduce_single_ablations(self):
        p, z, z_mom, bank, queue = self.batch(seed=4)
        labels = np.array([0, 1, 2, 0, OOD, 2])
        full, _ = obj.loss_total(p, z, z_mom, labels, bank, queue, temperature=0.2)
        no_pro, _ = obj.loss_total(
            p, z, z_mom, labels, bank, queue, temperature=0.2, lambda_pro=0.0
        )
        no_ins, _ = obj.loss_total(
            p, z, z_mom, labels, bank, queue, temperature=0.2, lambda_ins=0.0
        )
        assert no_pro.l_pro == 0.0 and no_pro.l_ce == full.l_ce
        assert no_pro.total == pytest.approx(full.l_ce + full.l_ins, abs=1e-15)
        assert no_ins.l_ins == 0.0
        assert no_ins.total == pytest.approx(full.l_ce + full.l_pro, abs=1e-15)

    def test_rotation_invariance_of_contrastive_terms(self):
        """Cosine-only dependence: rotating z, prototypes and queue together."""
        rng = Rng(9)
        d = 5
        g = rng.standard_normal((d, d))
        rot, _ = np.linalg.qr(g)
        z = unit_rows(rng, 4, d)
        protos = unit_rows(rng, 3, d)
        queue_rows = unit_rows(rng, 6, d)
        labels = np.array([0, 1, 2, 1])
        z_mom = unit_rows(rng, 4, d)

        def total(zz, pp, qq, mm):
            bank = make_bank(pp)
            queue = make_queue(qq)
            p = nk.softmax_rows(nk.Tensor(np.zeros((4, 3))))
            breakdown, _ = obj.loss_total(
                nk.Tensor(zz), nk.Tensor(zz), mm, labels, bank, queue, temperature=0.2
            )
            return breakdown.l_pro, breakdown.l_ins

        base = total(z, protos, queue_rows, z_mom)
        rotated = total(z @ rot, protos @ rot, queue_rows @ rot, z_mom @ rot)
        np.testing.assert_allclose(base, rotated, atol=1e-9)

    def test_gradient_of_total_matches_finite_differences(self):
        rng = Rng(11)
        n, k, d = 4, 3, 4
        bank = make_bank(unit_rows(rng, k, d))
        queue = make_queue(unit_rows(rng, 8, d))
        z_mom = unit_rows(rng, n, d)
        labels = np.array([0, OOD, 2, 1])
        logits0 = rng.standard_normal((n, k))
        raw = nk.Tensor(rng.standard_normal((n, d)), requires_grad=True)

        def f(t):
            z = nk.l2_normalize(t)
            p = nk.softmax_rows(nk.Tensor(logits0))
            _, total = obj.loss_total(
                p, z, z_mom, labels, bank, queue, temperature=0.3
            )
            return total

        assert nk.check_gradient(f, raw) <= 1e-6

    def test_every_term_is_nonnegative_and_finite(self):
        for seed in range(10):
            p, z, z_mom, bank, queue = self.batch(seed=seed)
            labels = Rng(seed).integers(-1, 3, size=6)
            if (labels >= 0).sum() == 0:
                labels[0] = 0
            breakdown, _ = obj.loss_total(
                p, z, z_mom, labels, bank, queue, temperature=0.2
            )
            for term in (breakdown.l_ce, breakdown.l_pro, breakdown.l_ins, breakdown.total):
                assert term >= 0.0 and math.isfinite(term)
