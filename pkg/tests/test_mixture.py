"""Tree mixture construction and exact score/prediction functions."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.polynomial.hermite import hermgauss

from stepfit import tape
from stepfit.errors import ConfigError, ContractError, DomainError
from stepfit.mixture import (
    GaussianMixtureModel,
    TreeConfig,
    build_tree_mixture,
    data_prediction,
    eps_prediction,
    log_density,
    sample_data,
    sample_prior,
    score,
    velocity,
)
from stepfit.schedules import alpha_sigma, make_schedule, ode_coefficients

OT = make_schedule("ot")
VE = make_schedule("ve")

UNIT = GaussianMixtureModel(
    weights=np.array([1.0]), means=np.zeros((1, 2)), stds=np.array([1.0])
)


def random_mixture(rng, k=10):
    w = rng.uniform(0.2, 1.0, size=k)
    w /= w.sum()
    w[-1] = 1.0 - w[:-1].sum()
    return GaussianMixtureModel(
        weights=w,
        means=rng.normal(scale=1.0, size=(k, 2)),
        stds=rng.uniform(0.05, 0.6, size=k),
    )


class TestTreeConstruction:
    def test_component_counts(self):
        assert build_tree_mixture(TreeConfig(depth=1, components_per_segment=1)).n_components == 3
        assert build_tree_mixture(TreeConfig(depth=3, components_per_segment=4)).n_components == 60
        assert build_tree_mixture(TreeConfig()).n_components == 378

    def test_deterministic_in_config(self):
        a = build_tree_mixture(TreeConfig(seed=7))
        b = build_tree_mixture(TreeConfig(seed=7))
        assert np.array_equal(a.means, b.means)
        assert np.array_equal(a.weights, b.weights)
        assert np.array_equal(a.stds, b.stds)

    def test_seed_changes_branching(self):
        a = build_tree_mixture(TreeConfig(seed=1))
        b = build_tree_mixture(TreeConfig(seed=2))
        assert not np.array_equal(a.means, b.means)

    def test_root_segment_grows_upward(self):
        gmm = build_tree_mixture(TreeConfig(depth=1, components_per_segment=3, root_length=1.2))
        root = gmm.means[:3]
        np.testing.assert_allclose(root[:, 0], 0.0, atol=1e-12)
        np.testing.assert_allclose(root[:, 1], [0.4, 0.8, 1.2], rtol=1e-12)

    def test_uniform_weights(self):
        gmm = build_tree_mixture(TreeConfig(depth=2, components_per_segment=2))
        np.testing.assert_allclose(gmm.weights, 1.0 / 14.0, rtol=1e-15)
        assert gmm.weights.sum() == pytest.approx(1.0, abs=1e-15)

    def test_component_limit(self):
        with pytest.raises(ConfigError):
            build_tree_mixture(TreeConfig(depth=14, components_per_segment=4))

    def test_invalid_configs_rejected(self):
        with pytest.raises(ConfigError):
            TreeConfig(depth=0)
        with pytest.raises(ConfigError):
            TreeConfig(components_per_segment=0)
        with pytest.raises(ConfigError):
            TreeConfig(length_decay=1.0)
        with pytest.raises(ConfigError):
            TreeConfig(segment_std=0.0)

    def test_mixture_validation(self):
        with pytest.raises(ContractError):
            GaussianMixtureModel(
                weights=np.array([0.5, 0.4]), means=np.zeros((2, 2)), stds=np.ones(2)
            )
        with pytest.raises(ContractError):
            GaussianMixtureModel(
                weights=np.array([1.0]), means=np.zeros((1, 2)), stds=np.array([0.0])
            )


def quadrature_density(gmm, schedule, x, t, n_nodes=96):
    """Noised density via Gauss-Hermite integration of the forward kernel,
    independent of the closed-form perturbation used by the library.  Each
    1-D convolution integrates with the narrower Gaussian as the weight so
    the remaining factor stays smooth on the node spacing."""

    def pdf(v, mean, std):
        return np.exp(-0.5 * ((v - mean) / std) ** 2) / (std * math.sqrt(2.0 * math.pi))

    a, sig = (float(v) for v in alpha_sigma(schedule, t))
    nodes, wts = hermgauss(n_nodes)
    z = math.sqrt(2.0) * nodes
    w = wts / math.sqrt(math.pi)
    kernel_width = sig / a
    total = 0.0
    for wi, mu, si in zip(gmm.weights, gmm.means, gmm.stds):
        factors = []
        for d in range(2):
            if si <= kernel_width:
                pts = mu[d] + si * z
                vals = pdf(x[d], a * pts, sig)
            else:
                pts = x[d] / a + kernel_width * z
                vals = pdf(pts, mu[d], si) / a
            factors.append(float(w @ vals))
        total += float(wi) * factors[0] * factors[1]
    return total


class TestDensityAndScore:
    def test_noising_closure_against_quadrature(self):
        rng = np.random.default_rng(11)
        gmm = random_mixture(rng, k=3)
        for t in (0.1, 0.5, 0.9):
            for _ in range(5):
                x = tuple(rng.normal(scale=0.8, size=2))
                direct = math.exp(float(log_density(gmm, OT, x, t)))
                assert direct == pytest.approx(quadrature_density(gmm, OT, x, t), rel=1e-9)

    def test_closure_against_plain_formula(self):
        rng = np.random.default_rng(12)
        gmm = random_mixture(rng)
        xs = rng.normal(scale=1.5, size=(1000, 2))
        ts = rng.uniform(OT.t0, OT.T, size=1000)
        got = np.exp(np.asarray(log_density(gmm, OT, (xs[:, 0], xs[:, 1]), ts)))
        a = 1.0 - ts
        var = (a**2)[:, None] * gmm.stds[None, :] ** 2 + (ts**2)[:, None]
        d2 = ((xs[:, None, :] - a[:, None, None] * gmm.means[None, :, :]) ** 2).sum(axis=2)
        ref = (gmm.weights[None, :] / (2.0 * math.pi * var) * np.exp(-0.5 * d2 / var)).sum(axis=1)
        np.testing.assert_allclose(got, ref, rtol=1e-10)

    def test_single_gaussian_score(self):
        s0, s1 = score(UNIT, OT, (1.0, 0.0), 0.5)
        assert s0 == pytest.approx(-2.0, rel=1e-14)
        assert s1 == pytest.approx(0.0, abs=1e-15)

    def test_score_zero_at_perturbed_mean(self):
        one = GaussianMixtureModel(
            weights=np.array([1.0]), means=np.array([[0.3, -0.7]]), stds=np.array([0.2])
        )
        t = 0.4
        a, _ = alpha_sigma(OT, t)
        s0, s1 = score(one, OT, (a * 0.3, a * -0.7), t)
        assert abs(s0) < 1e-13 and abs(s1) < 1e-13

    def test_score_matches_finite_differences(self):
        rng = np.random.default_rng(13)
        gmm = random_mixture(rng)
        h = 1e-5
        for _ in range(20):
            x = tuple(rng.normal(scale=1.2, size=2))
            t = float(rng.uniform(OT.t0, OT.T))
            s = score(gmm, OT, x, t)
            for d in range(2):
                xp = list(x)
                xm = list(x)
                xp[d] += h
                xm[d] -= h
                fd = (float(log_density(gmm, OT, tuple(xp), t))
                      - float(log_density(gmm, OT, tuple(xm), t))) / (2.0 * h)
                assert float(s[d]) == pytest.approx(fd, rel=1e-5, abs=1e-7)

    def test_extreme_log_weights_stay_finite(self):
        tiny = 1e-300  # log weight near -690
        gmm = GaussianMixtureModel(
            weights=np.array([1.0 - tiny, tiny]),
            means=np.array([[0.0, 0.0], [5.0, 5.0]]),
            stds=np.array([1.0, 1.0]),
        )
        val = float(log_density(gmm, OT, (0.5, 0.5), 0.5))
        s = score(gmm, OT, (0.5, 0.5), 0.5)
        assert math.isfinite(val)
        assert math.isfinite(float(s[0])) and math.isfinite(float(s[1]))


class TestPredictions:
    def test_unit_gaussian_example(self):
        x, t = (1.0, 0.0), 0.5
        e = eps_prediction(UNIT, OT, x, t)
        assert e[0] == pytest.approx(1.0, rel=1e-14)
        assert e[1] == pytest.approx(0.0, abs=1e-15)
        # (x - sigma*eps)/alpha = ((1,0) - 0.5*(1,0))/0.5 = (1, 0)
        d = data_prediction(UNIT, OT, x, t)
        assert d[0] == pytest.approx(1.0, rel=1e-14)
        v = velocity(UNIT, OT, x, t)
        assert abs(float(v[0])) < 1e-14 and abs(float(v[1])) < 1e-14

    def test_denoises_single_component_exactly(self):
        mu = (0.3, -0.7)
        one = GaussianMixtureModel(
            weights=np.array([1.0]), means=np.array([mu]), stds=np.array([0.2])
        )
        t = 0.4
        a, _ = alpha_sigma(OT, t)
        d = data_prediction(one, OT, (a * mu[0], a * mu[1]), t)
        assert d[0] == pytest.approx(mu[0], rel=1e-12)
        assert d[1] == pytest.approx(mu[1], rel=1e-12)

    @pytest.mark.parametrize("schedule", (OT, VE), ids=lambda s: s.kind)
    def test_reconstruction_identity(self, schedule):
        rng = np.random.default_rng(14)
        gmm = build_tree_mixture(TreeConfig())
        xs = rng.normal(scale=1.5, size=(200, 2))
        ts = rng.uniform(schedule.t0, schedule.T, size=200)
        a, sig = alpha_sigma(schedule, ts)
        x = (xs[:, 0], xs[:, 1])
        e = eps_prediction(gmm, schedule, x, ts)
        d = data_prediction(gmm, schedule, x, ts)
        for k in range(2):
            recon = np.asarray(a * d[k] + sig * e[k])
            np.testing.assert_allclose(recon, xs[:, k], rtol=1e-12, atol=1e-12)

    def test_velocity_equals_ode_drift(self):
        rng = np.random.default_rng(15)
        gmm = build_tree_mixture(TreeConfig())
        xs = rng.normal(scale=1.5, size=(1000, 2))
        ts = rng.uniform(OT.t0, OT.T, size=1000)
        x = (xs[:, 0], xs[:, 1])
        v = velocity(gmm, OT, x, ts)
        f, g2 = ode_coefficients(OT, ts)
        s = score(gmm, OT, x, ts)
        for k in range(2):
            drift = f * xs[:, k] - 0.5 * g2 * np.asarray(s[k])
            np.testing.assert_allclose(np.asarray(v[k]), drift, rtol=1e-10, atol=1e-10)

    def test_score_is_differentiable_on_tape(self):
        tp = tape.Tape()
        x0 = tp.leaf(0.8)
        x1 = tp.leaf(-0.3)
        s0, _ = score(UNIT, OT, (x0, x1), 0.5)
        g = tp.backward(s0)
        # score = -x/0.5, so d(s0)/dx0 = -2 exactly
        assert g.wrt(x0) == pytest.approx(-2.0, rel=1e-13)
        assert g.wrt(x1) == pytest.approx(0.0, abs=1e-13)


@settings(max_examples=100, deadline=None)
@given(
    mu0=st.floats(min_value=-2.0, max_value=2.0, allow_nan=False),
    mu1=st.floats(min_value=-2.0, max_value=2.0, allow_nan=False),
    std=st.floats(min_value=0.05, max_value=2.0, allow_nan=False),
    x0=st.floats(min_value=-3.0, max_value=3.0, allow_nan=False),
    x1=st.floats(min_value=-3.0, max_value=3.0, allow_nan=False),
    t=st.floats(min_value=0.01, max_value=0.95, allow_nan=False),
)
def test_single_component_closed_form(mu0, mu1, std, x0, x1, t):
    one = GaussianMixtureModel(
        weights=np.array([1.0]), means=np.array([[mu0, mu1]]), stds=np.array([std])
    )
    a, sig = alpha_sigma(OT, t)
    var = a * a * std * std + sig * sig
    s = score(one, OT, (x0, x1), t)
    assert float(s[0]) == pytest.approx(-(x0 - a * mu0) / var, rel=1e-11, abs=1e-11)
    assert float(s[1]) == pytest.approx(-(x1 - a * mu1) / var, rel=1e-11, abs=1e-11)


class TestSampling:
    def test_data_sampling_deterministic(self):
        gmm = build_tree_mixture(TreeConfig())
        a = sample_data(gmm, 64, seed=5)
        b = sample_data(gmm, 64, seed=5)
        assert a.shape == (64, 2)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, sample_data(gmm, 64, seed=6))

    def test_data_sampling_rejects_empty(self):
        gmm = build_tree_mixture(TreeConfig(depth=1))
        with pytest.raises(ContractError):
            sample_data(gmm, 0, seed=0)
        with pytest.raises(ContractError):
            sample_prior(OT, 0, seed=0)

    def test_data_sample_mean_matches_mixture(self):
        gmm = build_tree_mixture(TreeConfig())
        xs = sample_data(gmm, 100_000, seed=21)
        target = gmm.weights @ gmm.means
        second = gmm.weights @ (gmm.means**2 + gmm.stds[:, None] ** 2)
        std = np.sqrt(second - target**2)
        bound = 4.0 * std / math.sqrt(100_000.0)
        assert np.all(np.abs(xs.mean(axis=0) - target) < bound)

    def test_prior_mean_near_zero(self):
        xs = sample_prior(OT, 100_000, seed=22)
        assert np.all(np.abs(xs.mean(axis=0)) < 0.02)

    def test_ve_prior_covariance(self):
        xs = sample_prior(VE, 100_000, seed=23)
        cov = np.cov(xs.T)
        target = VE.sigma_T**2
        assert cov[0, 0] == pytest.approx(target, rel=0.02)
        assert cov[1, 1] == pytest.approx(target, rel=0.02)
        assert abs(cov[0, 1]) < 0.02 * target

    def test_faithful_prior_tracks_data(self):
        gmm = build_tree_mixture(TreeConfig())
        xs = sample_prior(OT, 50_000, seed=24, mode="faithful", gmm=gmm)
        a_T = 1.0 - OT.T
        target = a_T * (gmm.weights @ gmm.means)
        assert xs.shape == (50_000, 2)
        assert np.all(np.abs(xs.mean(axis=0) - target) < 0.02)

    def test_faithful_prior_needs_mixture(self):
        with pytest.raises(ContractError):
            sample_prior(OT, 4, seed=0, mode="faithful")
        with pytest.raises(ContractError):
            sample_prior(OT, 4, seed=0, mode="uniform")
