"""Encoder/projection/classifier behaviour and the EMA twin contract."""

import numpy as np
import pytest

from mopro import model, numkit as nk
from mopro.errors import ConfigError, DimensionError, StructuralError


def build(rng_seed=1, d_x=8, hidden=(16, 16), d_e=12, d_p=4, k=3):
    rng = nk.Rng(rng_seed)
    enc = model.EncoderNet(d_x, hidden, d_e, rng)
    proj = model.ProjectionHead(d_e, d_e, d_p, rng)
    cls = model.ClassifierHead(d_e, k, rng)
    return enc, proj, cls


class TestForwardEmbed:
    def test_zero_weights_leave_only_the_bias_path(self):
        enc, proj, _ = build()
        for p in (*enc.parameters(), *proj.parameters()):
            p.data[:] = 0.0
        final_bias = proj.biases[-1]
        final_bias.data[:] = [3.0, 4.0, 0.0, 0.0]
        x = nk.Rng(0).standard_normal((5, 8))
        _, z = model.forward_embed(enc, proj, nk.Tensor(x))
        np.testing.assert_allclose(z.data, np.tile([0.6, 0.8, 0.0, 0.0], (5, 1)))

    def test_identical_inputs_give_identical_outputs(self):
        enc, proj, _ = build()
        x = np.tile(nk.Rng(4).standard_normal(8), (2, 1))
        v, z = model.forward_embed(enc, proj, nk.Tensor(x))
        np.testing.assert_array_equal(v.data[0], v.data[1])
        np.testing.assert_array_equal(z.data[0], z.data[1])

    def test_projection_rows_unit_norm_for_random_nets(self):
        for seed in range(5):
            enc, proj, _ = build(rng_seed=seed)
            x = nk.Rng(seed + 100).standard_normal((7, 8)) * 3
            _, z = model.forward_embed(enc, proj, nk.Tensor(x))
            np.testing.assert_allclose(np.linalg.norm(z.data, axis=1), 1.0, atol=1e-9)

    def test_width_mismatch_is_rejected(self):
        enc, proj, _ = build()
        with pytest.raises(DimensionError):
            model.forward_embed(enc, proj, nk.Tensor(np.zeros((2, 5))))

    def test_graph_and_array_paths_agree(self):
        enc, proj, cls = build()
        x = nk.Rng(8).standard_normal((6, 8))
        v, z = model.forward_embed(enc, proj, nk.Tensor(x))
        np.testing.assert_allclose(enc.forward_array(x), v.data, atol=1e-12)
        np.testing.assert_allclose(proj.forward_array(v.data), z.data, atol=1e-12)
        p = model.forward_classify(cls, v)
        np.testing.assert_allclose(cls.forward_array(v.data), p.data, atol=1e-12)


class TestForwardClassify:
    def test_zero_weights_give_uniform_rows(self):
        enc, proj, cls = build(k=5)
        cls.w.data[:] = 0.0
        cls.b.data[:] = 0.0
        p = cls.forward(nk.Tensor(np.ones((3, 12))))
        np.testing.assert_allclose(p.data, 0.2)

    def test_single_class_gives_all_ones(self):
        _, _, cls = build(k=1)
        p = cls.forward(nk.Tensor(nk.Rng(1).standard_normal((4, 12))))
        np.testing.assert_allclose(p.data, 1.0)

    def test_argmax_invariant_to_uniform_logit_shift(self):
        _, _, cls = build(k=4)
        v = nk.Rng(3).standard_normal((10, 12))
        base = cls.forward(nk.Tensor(v)).data.argmax(axis=1)
        cls.b.data += 7.5  # shifts every logit equally
        shifted = cls.forward(nk.Tensor(v)).data.argmax(axis=1)
        np.testing.assert_array_equal(base, shifted)


class TestMomentumTwin:
    def test_initialized_as_exact_copy(self):
        enc, proj, _ = build()
        twin = model.MomentumTwin(enc, proj)
        x = nk.Rng(2).standard_normal((4, 8))
        _, z = model.forward_embed(enc, proj, nk.Tensor(x))
        np.testing.assert_allclose(twin.forward_embed(x), z.data, atol=1e-12)

    def test_momentum_zero_copies_online(self):
        enc, proj, _ = build()
        twin = model.MomentumTwin(enc, proj)
        for p in enc.parameters():
            p.data += 1.0
        model.ema_update_params(twin, enc, proj, 0.0)
        for dst, src in zip(twin.params, (*enc.parameters(), *proj.parameters())):
            np.testing.assert_array_equal(dst, src.data)

    def test_single_step_arithmetic(self):
        enc, proj, _ = build()
        twin = model.MomentumTwin(enc, proj)
        twin.params[0][:] = 1.0
        enc.parameters()[0].data[:] = 0.0
        model.ema_update_params(twin, enc, proj, 0.999)
        np.testing.assert_allclose(twin.params[0], 0.999, atol=1e-15)

    def test_closed_form_after_constant_updates(self):
        # theta'_t = m^t theta'_0 + (1 - m^t) theta for constant theta
        enc, proj, _ = build()
        twin = model.MomentumTwin(enc, proj)
        start = [p.copy() for p in twin.params]
        target = [p.data.copy() for p in (*enc.parameters(), *proj.parameters())]
        for p in (*enc.parameters(), *proj.parameters()):
            p.data[:] = p.data  # constant online parameters
        m = 0.97
        for _ in range(100):
            model.ema_update_params(twin, enc, proj, m)
        decay = m**100
        for got, s0, tgt in zip(twin.params, start, target):
            np.testing.assert_allclose(got, decay * s0 + (1 - decay) * tgt, atol=1e-12)

    def test_bad_momentum_rejected(self):
        enc, proj, _ = build()
        twin = model.MomentumTwin(enc, proj)
        with pytest.raises(ConfigError):
            model.ema_update_params(twin, enc, proj, 1.0)

    def test_shape_mismatch_rejected(self):
        enc, proj, _ = build()
        twin = model.MomentumTwin(enc, proj)
        other_enc, other_proj, _ = build(d_e=10)
        with pytest.raises(StructuralError):
            model.ema_update_params(twin, other_enc, other_proj, 0.9)

    def test_matches_reference_recursion_on_synthetic_trajectory(self):
        # the twin equals the EMA recursion applied to the online history
        enc, proj, _ = build(hidden=(4,), d_x=2, d_e=2, d_p=2)
        twin = model.MomentumTwin(enc, proj)
        initial = [p.copy() for p in twin.params]
        m = 0.9
        rng = nk.Rng(77)
        history = []
        for _ in range(12):
            for p in (*enc.parameters(), *proj.parameters()):
                p.data[:] = rng.standard_normal(p.data.shape)
            history.append([p.data.copy() for p in (*enc.parameters(), *proj.parameters())])
            model.ema_update_params(twin, enc, proj, m)
        for i, start in enumerate(initial):
            value = start.copy()
            for step_params in history:
                value = m * value + (1 - m) * step_params[i]
            np.testing.assert_allclose(twin.params[i], value, atol=1e-12)
