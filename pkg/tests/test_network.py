"""Head network: init, embeddings, forward passes, and serialization."""

import json
import math

import numpy as np
import pytest

from stepfit import tape
from stepfit.discretize import Bounds, decode_heads, heuristic
from stepfit.errors import ConfigError, ContractError
from stepfit.network import (
    PhiNetwork,
    embed_condition,
    embed_conditions,
    forward,
    forward_point,
    forward_taped,
    grads_to_arrays,
    init,
    leaf_params,
)
from stepfit.schedules import make_schedule

OT = make_schedule("ot")


class TestInit:
    def test_deterministic_in_seed(self):
        a = init(seed=3, n_steps=4)
        b = init(seed=3, n_steps=4)
        assert np.array_equal(a.w1, b.w1)
        assert not np.array_equal(a.w1, init(seed=4, n_steps=4).w1)

    def test_final_layer_starts_at_zero(self):
        net = init(seed=0, n_steps=3)
        assert np.all(net.w2 == 0.0) and np.all(net.b2 == 0.0)
        assert np.all(net.b1 == 0.0)

    def test_fresh_network_decodes_to_uniform_grid(self):
        net = init(seed=1, n_steps=4)
        rng = np.random.default_rng(60)
        raw = forward_point(net, rng.normal(size=2))
        assert raw.o_tau == (0.0,) * 4
        assert raw.o_dtau == (0.0,) * 4
        assert raw.o_gamma == (0.0,) * 4
        xi = decode_heads(raw, Bounds(), OT, 4)
        ref = heuristic("uniform", OT, 4)
        np.testing.assert_allclose(xi.taus, ref.taus, atol=1e-12)
        assert xi.dtaus == ref.dtaus and xi.gammas == ref.gammas

    def test_hidden_preactivation_scale(self):
        net = init(seed=2, n_steps=3, hidden=64)
        rng = np.random.default_rng(61)
        x = rng.standard_normal((10_000, 2))
        pre = x @ net.w1.T + net.b1
        predicted = math.sqrt(2.0) * math.sqrt(2.0 / (net.in_dim + net.hidden))
        ratio = float(pre.std()) / predicted
        assert 0.3 <= ratio <= 3.0

    def test_dimension_validation(self):
        with pytest.raises(ConfigError):
            init(seed=0, n_steps=0)
        with pytest.raises(ConfigError):
            init(seed=0, n_steps=2, hidden=0)
        with pytest.raises(ConfigError):
            init(seed=0, n_steps=2, label_dim=-1)

    def test_shape_validation(self):
        net = init(seed=0, n_steps=2)
        with pytest.raises(ContractError):
            PhiNetwork(w1=net.w1, b1=net.b1, w2=net.w2[:, :-1], b2=net.b2, n_steps=2)


class TestEmbedding:
    def test_scaled_one_hot(self):
        np.testing.assert_array_equal(embed_condition(2, 4), [0.0, 0.0, 0.5, 0.0])
        np.testing.assert_array_equal(embed_condition(0, 1), [1.0])

    def test_norm_is_inverse_width(self):
        for dim in (1, 3, 9):
            v = embed_condition(dim - 1, dim)
            assert float(v @ v) == pytest.approx(1.0 / dim, rel=1e-15)

    def test_out_of_range_rejected(self):
        with pytest.raises(ContractError):
            embed_condition(4, 4)
        with pytest.raises(ContractError):
            embed_condition(-1, 4)

    def test_condition_without_labels_rejected(self):
        with pytest.raises(ContractError):
            embed_condition(0, 0)

    def test_none_embeds_to_zeros(self):
        assert embed_condition(None, 0).shape == (0,)
        np.testing.assert_array_equal(embed_condition(None, 3), np.zeros(3))

    def test_stacking(self):
        emb = embed_conditions([0, 2, None], 3, 4)
        assert emb.shape == (3, 4)
        np.testing.assert_array_equal(emb[2], np.zeros(4))
        with pytest.raises(ContractError):
            embed_conditions([0, 1], 3, 4)


class TestForward:
    def test_pure(self):
        net = init(seed=5, n_steps=3, zero_last=False)
        x = np.random.default_rng(62).normal(size=(8, 2))
        a = forward(net, x)
        b = forward(net, x)
        for ga, gb in zip((a.o_tau, a.o_dtau, a.o_gamma), (b.o_tau, b.o_dtau, b.o_gamma)):
            for va, vb in zip(ga, gb):
                assert np.array_equal(va, vb)

    def test_point_matches_batch_row(self):
        net = init(seed=6, n_steps=3, zero_last=False)
        x = np.random.default_rng(63).normal(size=(5, 2))
        batch = forward(net, x)
        row = forward_point(net, x[2])
        for grp_b, grp_r in zip((batch.o_tau, batch.o_dtau, batch.o_gamma),
                                (row.o_tau, row.o_dtau, row.o_gamma)):
            for vb, vr in zip(grp_b, grp_r):
                assert float(np.asarray(vb)[2]) == pytest.approx(vr, rel=1e-13, abs=1e-15)

    def test_unconditional_ignores_condition_slot(self):
        net = init(seed=7, n_steps=2, zero_last=False)
        x = np.random.default_rng(64).normal(size=(4, 2))
        a = forward(net, x)
        b = forward(net, x, conditions=[None] * 4)
        assert all(np.array_equal(u, v) for u, v in zip(a.o_tau, b.o_tau))

    def test_condition_changes_output(self):
        net = init(seed=8, n_steps=2, label_dim=3, zero_last=False)
        x = np.zeros((1, 2))
        a = forward(net, x, conditions=[0])
        b = forward(net, x, conditions=[1])
        assert not all(
            np.array_equal(u, v) for u, v in zip(a.o_tau + a.o_dtau, b.o_tau + b.o_dtau)
        )

    def test_bad_shapes_rejected(self):
        net = init(seed=9, n_steps=2)
        with pytest.raises(ContractError):
            forward(net, np.zeros((4, 3)))


class TestTapedForward:
    def test_matches_eager_values(self):
        net = init(seed=10, n_steps=3, hidden=16, zero_last=False)
        rng = np.random.default_rng(65)
        x = rng.normal(size=(6, 2))
        eager = forward(net, x)
        tp = tape.Tape()
        leaves = leaf_params(tp, net)
        taped = forward_taped(net, leaves, (x[:, 0], x[:, 1]))
        for grp_e, grp_t in zip((eager.o_tau, eager.o_dtau, eager.o_gamma),
                                (taped.o_tau, taped.o_dtau, taped.o_gamma)):
            for ve, vt in zip(grp_e, grp_t):
                np.testing.assert_allclose(np.asarray(tape.value(vt)), ve, rtol=1e-12)

    def test_conditioned_taped_matches_eager(self):
        net = init(seed=11, n_steps=2, hidden=8, label_dim=3, zero_last=False)
        rng = np.random.default_rng(66)
        x = rng.normal(size=(4, 2))
        conds = [0, 2, 1, None]
        eager = forward(net, x, conditions=conds)
        tp = tape.Tape()
        leaves = leaf_params(tp, net)
        emb = embed_conditions(conds, 4, 3)
        taped = forward_taped(net, leaves, (x[:, 0], x[:, 1]), cond_rows=emb)
        np.testing.assert_allclose(
            np.asarray(tape.value(taped.o_tau[0])), eager.o_tau[0], rtol=1e-12
        )

    def test_conditioned_network_requires_embeddings(self):
        net = init(seed=12, n_steps=2, hidden=4, label_dim=2, zero_last=False)
        tp = tape.Tape()
        with pytest.raises(ContractError):
            forward_taped(net, leaf_params(tp, net), (0.1, 0.2))

    def test_disabled_heads_are_constant_zero(self):
        net = init(seed=13, n_steps=3, hidden=8, zero_last=False)
        tp = tape.Tape()
        leaves = leaf_params(tp, net)
        raw = forward_taped(net, leaves, (0.4, -0.2), heads_on=(True, False, False))
        assert raw.o_dtau == (0.0, 0.0, 0.0)
        assert raw.o_gamma == (0.0, 0.0, 0.0)
        assert all(isinstance(v, tape.Var) for v in raw.o_tau)

    def test_weight_gradient_matches_finite_differences(self):
        net = init(seed=14, n_steps=2, hidden=6, zero_last=False)
        x = np.array([[0.7, -0.9]])

        def head0(n):
            return float(np.asarray(forward(n, x).o_tau[0])[0])

        tp = tape.Tape()
        leaves = leaf_params(tp, net)
        taped = forward_taped(net, leaves, (x[0, 0], x[0, 1]))
        grad = tp.backward(taped.o_tau[0])
        grads = grads_to_arrays(grad, leaves)
        rng = np.random.default_rng(67)
        params = net.params()
        for name in ("w1", "b1", "w2", "b2"):
            flat = params[name].reshape(-1)
            for idx in rng.choice(flat.size, size=min(4, flat.size), replace=False):
                h = 1e-6 * max(1.0, abs(flat[idx]))
                bump = params[name].copy()
                bump.reshape(-1)[idx] += h
                plus = head0(net.with_params({**params, name: bump}))
                bump.reshape(-1)[idx] -= 2.0 * h
                minus = head0(net.with_params({**params, name: bump}))
                fd = (plus - minus) / (2.0 * h)
                got = grads[name].reshape(-1)[idx]
                assert got == pytest.approx(fd, rel=1e-5, abs=1e-8)


class TestSerialization:
    def test_json_round_trip_exact(self):
        net = init(seed=15, n_steps=3, hidden=8, label_dim=2, zero_last=False)
        payload = json.dumps(net.to_dict())
        back = PhiNetwork.from_dict(json.loads(payload))
        assert np.array_equal(back.w1, net.w1)
        assert np.array_equal(back.b1, net.b1)
        assert np.array_equal(back.w2, net.w2)
        assert np.array_equal(back.b2, net.b2)
        assert back.n_steps == net.n_steps
        assert back.label_dim == net.label_dim
        assert back.input_scale == net.input_scale

    def test_with_params_round_trip(self):
        net = init(seed=16, n_steps=2, zero_last=False)
        clone = net.with_params(net.params())
        assert np.array_equal(clone.w1, net.w1)
        assert np.array_equal(clone.w2, net.w2)
