"""Finite-difference verification of the differentiation engine.

Two layers of checking: every primitive against central differences at
random points (excluding kink neighborhoods of the non-smooth ones), and
the full pipeline gradient — endpoint loss of a multistep solve through
the head network — against central differences in every weight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import discretize, mixture, network, optim, rngs, schedules, solvers, tape
from .errors import ConfigError
from .solvers import SolverSpec

_TINY = 1e-8


def _rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), _TINY)


def _tape_grads(fn, xs):
    tp = tape.Tape()
    vs = [tp.leaf(float(x)) for x in xs]
    out = fn(vs)
    grad = tp.backward(out)
    return [float(grad.wrt(v)) for v in vs]


def _fd_grads(fn, xs, h):
    out = []
    for i in range(len(xs)):
        hp = [float(x) for x in xs]
        hm = [float(x) for x in xs]
        hp[i] += h
        hm[i] -= h
        out.append((fn(hp) - fn(hm)) / (2.0 * h))
    return out


def _away_from(rng, lo, hi, taboo=None, margin=1e-3):
    while True:
        x = float(rng.uniform(lo, hi))
        if taboo is None or abs(x - taboo) > margin:
            return x


# name -> (fn over a list of operands, sampler(rng) -> operand list)
def _primitive_table():
    return {
        "add": (lambda v: v[0] + v[1], lambda r: [r.uniform(-3, 3), r.uniform(-3, 3)]),
        "sub": (lambda v: v[0] - v[1], lambda r: [r.uniform(-3, 3), r.uniform(-3, 3)]),
        "mul": (lambda v: v[0] * v[1], lambda r: [r.uniform(-3, 3), r.uniform(-3, 3)]),
        "div": (
            lambda v: v[0] / v[1],
            lambda r: [r.uniform(-3, 3), _away_from(r, 0.3, 3.0) * (1 if r.uniform() < 0.5 else -1)],
        ),
        "neg": (lambda v: -v[0], lambda r: [r.uniform(-3, 3)]),
        "exp": (lambda v: tape.exp(v[0]), lambda r: [r.uniform(-2, 2)]),
        "log": (lambda v: tape.log(v[0]), lambda r: [r.uniform(0.1, 5.0)]),
        "tanh": (lambda v: tape.tanh(v[0]), lambda r: [r.uniform(-3, 3)]),
        "relu": (
            lambda v: tape.relu(v[0]),
            lambda r: [_away_from(r, -3.0, 3.0, taboo=0.0)],
        ),
        "sigmoid": (lambda v: tape.sigmoid(v[0]), lambda r: [r.uniform(-5, 5)]),
        "sqrt": (lambda v: tape.sqrt(v[0]), lambda r: [r.uniform(0.1, 9.0)]),
        "power": (lambda v: tape.power(v[0], 3.0), lambda r: [r.uniform(0.2, 2.0)]),
        "maximum": (
            lambda v: tape.maximum(v[0], v[1]),
            lambda r: _distinct_pair(r),
        ),
        "sum": (
            lambda v: tape.asum(v),
            lambda r: [r.uniform(-3, 3) for _ in range(5)],
        ),
        "logsumexp": (
            lambda v: tape.logsumexp(v),
            lambda r: [r.uniform(-3, 3) for _ in range(5)],
        ),
    }


def _distinct_pair(rng):
    while True:
        a, b = rng.uniform(-3, 3), rng.uniform(-3, 3)
        if abs(a - b) > 1e-3:
            return [a, b]


@dataclass
class PrimitiveCheck:
    """Worst relative error of one primitive over its sample points."""

    name: str
    max_rel_err: float
    points: int


def check_primitives(seed: int = 0, points: int = 100, h: float = 1e-5) -> list[PrimitiveCheck]:
    """Compare every primitive's gradient to central differences."""
    if points < 1:
        raise ConfigError("points must be >= 1")
    results = []
    for name, (fn, sampler) in _primitive_table().items():
        rng = rngs.rng_for(seed, f"grad-check:{name}")
        worst = 0.0
        for _ in range(points):
            xs = sampler(rng)
            got = _tape_grads(fn, xs)
            want = _fd_grads(fn, xs, h)
            for g, w in zip(got, want):
                worst = max(worst, _rel_err(g, w))
        results.append(PrimitiveCheck(name=name, max_rel_err=worst, points=points))
    return results


@dataclass
class EndToEndCheck:
    """Worst relative error over all network weights of the full pipeline."""

    max_rel_err: float
    worst_param: str
    n_weights: int
    tape_nodes: int


def _random_mixture(seed: int, n_components: int) -> mixture.GaussianMixtureModel:
    rng = rngs.rng_for(seed, "grad-check:mixture")
    weights = rng.uniform(0.5, 1.5, n_components)
    weights /= weights.sum()
    means = rng.uniform(-1.0, 1.0, (n_components, 2))
    stds = rng.uniform(0.05, 0.3, n_components)
    return mixture.GaussianMixtureModel(weights=weights, means=means, stds=stds)


def _kink_safe_start(seed, net, bounds, schedule, n_steps, margin=1e-3):
    """A start point whose pipeline stays clear of relu/clamp kinks.

    Perturbing a weight by the finite-difference step must not flip any
    rectifier or hit a clamp boundary, or the two-sided difference would
    straddle a kink.  Candidate starts are drawn from derived streams
    until all margins clear.
    """
    for attempt in range(256):
        start = mixture.sample_prior(
            schedule, 1, rngs.derive_seed(seed, f"grad-check:start:{attempt}")
        )[0]
        x_pair = (float(start[0]), float(start[1]))
        feats = np.array([x_pair[0], x_pair[1]]) * net.input_scale
        pre = net.w1 @ feats + net.b1
        if np.min(np.abs(pre)) <= margin:
            continue
        raw = network.forward_point(net, x_pair)
        xi = discretize.decode_heads(raw, bounds, schedule, n_steps)
        shifted = [
            float(tape.value(t)) + float(tape.value(d))
            for t, d in zip(xi.taus[1:], xi.dtaus)
        ]
        if min(min(s - schedule.t0, schedule.T - s) for s in shifted) <= margin:
            continue
        return x_pair
    raise ConfigError("no kink-safe start found; widen margins or change seed")


def check_end_to_end(
    seed: int = 0,
    h: float = 1e-5,
    n_steps: int = 3,
    n_components: int = 10,
    hidden: int = 16,
) -> EndToEndCheck:
    """Differentiate a full solve through the network; compare to
    central differences in every weight.

    Both layers draw random weights so gradients reach layer one; the
    finite-difference evaluations rerun the identical taped computation,
    so the only discrepancy is truncation error.
    """
    gmm = _random_mixture(seed, n_components)
    schedule = schedules.make_schedule("ot")
    spec = SolverSpec(family="ipndm", max_order=4)
    net = network.init(seed, n_steps, hidden=hidden, zero_last=False)
    bounds = discretize.Bounds()
    x_pair = _kink_safe_start(seed, net, bounds, schedule, n_steps)
    target = solvers.reference_solve(gmm, schedule, x_pair, 32)
    target = (float(target[0]), float(target[1]))

    def run(params, want_grads):
        tp = tape.Tape()
        leaves = network.leaf_params(tp, params)
        raw = network.forward_taped(net, leaves, x_pair)
        xi = discretize.decode_heads(raw, bounds, schedule, n_steps)
        end = solvers.solve(spec, gmm, schedule, x_pair, xi)
        loss = optim.mse_pair(end, target[0], target[1])
        if not want_grads:
            return float(tape.value(loss)), None, len(tp)
        grad = tp.backward(loss)
        return float(tape.value(loss)), network.grads_to_arrays(grad, leaves), len(tp)

    params = net.params()
    _, grads, nodes = run(params, True)
    worst = 0.0
    worst_name = ""
    count = 0
    for name, arr in params.items():
        for idx in np.ndindex(arr.shape):
            count += 1
            step = h * max(1.0, abs(arr[idx]))
            plus = {k: v.copy() for k, v in params.items()}
            minus = {k: v.copy() for k, v in params.items()}
            plus[name][idx] += step
            minus[name][idx] -= step
            lp, _, _ = run(plus, False)
            lm, _, _ = run(minus, False)
            fd = (lp - lm) / (2.0 * step)
            err = _rel_err(float(grads[name][idx]), fd)
            if err > worst:
                worst = err
                worst_name = f"{name}{list(idx)}"
    return EndToEndCheck(
        max_rel_err=worst, worst_param=worst_name, n_weights=count, tape_nodes=nodes
    )
