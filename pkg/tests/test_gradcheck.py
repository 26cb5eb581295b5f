"""Finite-difference audits of the differentiation engine."""

import numpy as np
import pytest

from stepfit import gradcheck, network, tape
from stepfit.errors import ConfigError

PRIMITIVES = {
    "add", "sub", "mul", "div", "neg", "exp", "log", "tanh", "relu",
    "sigmoid", "sqrt", "power", "maximum", "sum", "logsumexp",
}


class TestPrimitiveChecks:
    def test_every_primitive_below_tolerance(self):
        results = gradcheck.check_primitives(seed=0, points=100, h=1e-5)
        assert {r.name for r in results} == PRIMITIVES
        for r in results:
            assert r.points == 100
            assert r.max_rel_err < 1e-6, f"{r.name}: {r.max_rel_err}"

    def test_deterministic(self):
        first = gradcheck.check_primitives(seed=3, points=20)
        second = gradcheck.check_primitives(seed=3, points=20)
        assert first == second

    def test_points_validated(self):
        with pytest.raises(ConfigError):
            gradcheck.check_primitives(points=0)

    def test_corrupted_derivative_is_detected(self, monkeypatch):
        # A tanh whose value is right but whose partial is scaled 0.9
        # must blow past the tolerance while other primitives stay put.
        def broken_tanh(x):
            if not isinstance(x, tape.Var):
                return np.tanh(x)
            t = x.tape
            v = np.tanh(t._values[x.i])
            return t._record(v, (x.i,), (0.9 * (1.0 - v * v),))

        monkeypatch.setattr(tape, "tanh", broken_tanh)
        results = {r.name: r.max_rel_err for r in gradcheck.check_primitives(points=10)}
        assert results["tanh"] > 1e-2
        assert results["mul"] < 1e-6


class TestEndToEnd:
    def test_full_pipeline_below_tolerance(self):
        res = gradcheck.check_end_to_end(seed=0, h=1e-5, n_steps=3)
        assert res.max_rel_err < 1e-4
        assert res.worst_param
        assert res.tape_nodes > 0

    def test_counts_every_weight(self):
        res = gradcheck.check_end_to_end(seed=0, n_steps=3, hidden=16)
        net = network.init(0, 3, hidden=16, zero_last=False)
        assert res.n_weights == sum(p.size for p in net.params().values())

    def test_deterministic(self):
        assert gradcheck.check_end_to_end(seed=1, hidden=4) == gradcheck.check_end_to_end(
            seed=1, hidden=4
        )

    def test_tape_grows_linearly_with_steps(self):
        three = gradcheck.check_end_to_end(seed=0, n_steps=3, hidden=4)
        six = gradcheck.check_end_to_end(seed=0, n_steps=6, hidden=4)
        assert six.tape_nodes <= 2.5 * three.tape_nodes

    def test_passes_across_seeds(self):
        for seed in (1, 2):
            res = gradcheck.check_end_to_end(seed=seed, hidden=8)
            assert res.max_rel_err < 1e-4


class TestKinkSafety:
    def test_selected_start_clears_margins(self):
        from stepfit import discretize, schedules

        schedule = schedules.make_schedule("ot")
        net = network.init(5, 3, hidden=16, zero_last=False)
        bounds = discretize.Bounds()
        margin = 1e-3
        x_pair = gradcheck._kink_safe_start(5, net, bounds, schedule, 3, margin)
        feats = np.array(x_pair) * net.input_scale
        pre = net.w1 @ feats + net.b1
        assert np.min(np.abs(pre)) > margin
