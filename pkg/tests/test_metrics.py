"""Metric estimators: endpoint MSE, histogram KL, sliced Wasserstein."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stepfit.errors import ConfigError, ContractError
from stepfit.metrics import (
    GridConfig,
    MetricsReport,
    build_report,
    endpoint_mse,
    export_scatter,
    kl_divergence,
    wasserstein,
)


def cloud(seed, n, spread=1.0, center=(0.0, 0.0)):
    rng = np.random.default_rng(seed)
    return center + spread * rng.standard_normal((n, 2))


class TestGridConfig:
    def test_defaults(self):
        cfg = GridConfig()
        assert cfg.bins == 100
        assert cfg.pad_fraction == 0.1
        assert cfg.smoothing == 1e-6

    def test_dict_round_trip(self):
        cfg = GridConfig(bins=32, pad_fraction=0.25, smoothing=1e-4)
        assert GridConfig(**cfg.to_dict()) == cfg

    @pytest.mark.parametrize(
        "kwargs",
        [{"bins": 0}, {"pad_fraction": -0.1}, {"smoothing": 0.0}],
    )
    def test_validation(self, kwargs):
        with pytest.raises(ConfigError):
            GridConfig(**kwargs)


class TestEndpointMse:
    def test_identical_lists_are_zero(self):
        pts = cloud(0, 50)
        mean, per_sample = endpoint_mse(pts, pts.copy())
        assert mean == 0.0
        assert np.all(per_sample == 0.0)

    def test_single_pair_formula(self):
        mean, per_sample = endpoint_mse([(0.0, 0.0)], [(1.0, 1.0)])
        assert mean == 1.0
        assert per_sample.tolist() == [1.0]

    def test_matches_brute_force_on_100_pairs(self):
        rng = np.random.default_rng(7)
        student = rng.standard_normal((100, 2))
        teacher = rng.standard_normal((100, 2))
        mean, per_sample = endpoint_mse(student, teacher)

        total = 0.0
        for i in range(100):
            d = 0.0
            for k in range(2):
                d += (student[i, k] - teacher[i, k]) ** 2
            d /= 2.0
            assert per_sample[i] == pytest.approx(d, rel=1e-12)
            total += d
        assert mean == pytest.approx(total / 100.0, rel=1e-12)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(8)
        student = rng.standard_normal((64, 2))
        teacher = rng.standard_normal((64, 2))
        perm = rng.permutation(64)
        mean, _ = endpoint_mse(student, teacher)
        permuted, _ = endpoint_mse(student[perm], teacher[perm])
        assert permuted == pytest.approx(mean, rel=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ContractError):
            endpoint_mse(cloud(0, 3), cloud(1, 4))

    def test_empty_rejected(self):
        with pytest.raises(ContractError):
            endpoint_mse(np.empty((0, 2)), np.empty((0, 2)))


class TestKlDivergence:
    def test_identical_lists_give_zero(self):
        pts = cloud(1, 200)
        assert kl_divergence(pts, pts.copy()) == 0.0

    def test_one_hot_versus_uniform_closed_form(self):
        # Q is a 5x5 lattice landing one point per bin; P piles a large
        # count onto the center bin.  With one point per Q bin the
        # smoothed Q histogram is exactly uniform.
        bins, n_hot, eps = 5, 10000, 1e-6
        lattice = np.array(
            [(float(i), float(j)) for i in range(bins) for j in range(bins)]
        )
        hot = np.tile([(2.0, 2.0)], (n_hot, 1))
        kl = kl_divergence(hot, lattice, GridConfig(bins=bins, smoothing=eps))

        n_bins = bins * bins
        p_hot = (n_hot + eps) / (n_hot + n_bins * eps)
        p_cold = eps / (n_hot + n_bins * eps)
        expected = p_hot * math.log(p_hot * n_bins)
        expected += (n_bins - 1) * p_cold * math.log(p_cold * n_bins)
        assert kl == pytest.approx(expected, rel=1e-12)
        assert kl == pytest.approx(math.log(n_bins), rel=1e-6)

    def test_non_negative_on_100_random_pairs(self):
        for trial in range(100):
            p = cloud(2 * trial, 40, spread=1.0 + 0.01 * trial)
            q = cloud(2 * trial + 1, 40, center=(0.1 * (trial % 5), 0.0))
            assert kl_divergence(p, q) >= 0.0

    def test_deterministic(self):
        p, q = cloud(3, 80), cloud(4, 80)
        assert kl_divergence(p, q) == kl_divergence(p, q)

    def test_sensitive_to_grid_config(self):
        p, q = cloud(5, 120), cloud(6, 120, spread=1.4)
        coarse = kl_divergence(p, q, GridConfig(bins=10))
        fine = kl_divergence(p, q, GridConfig(bins=100))
        assert coarse != fine

    def test_degenerate_axis_stays_finite(self):
        # All points share one y value; the unit-window fallback keeps
        # the histogram well defined.
        p = np.column_stack([np.linspace(-1, 1, 30), np.zeros(30)])
        q = np.column_stack([np.linspace(-1, 1, 30) + 0.1, np.zeros(30)])
        assert math.isfinite(kl_divergence(p, q))

    def test_empty_rejected(self):
        with pytest.raises(ContractError):
            kl_divergence(np.empty((0, 2)), cloud(0, 5))


class TestWasserstein:
    def test_identical_sets_give_zero(self):
        pts = cloud(10, 150)
        assert wasserstein(pts, pts.copy()) == 0.0

    def test_point_masses_along_axis(self):
        # Separation d along x projects to d*cos(theta); the squared
        # costs average to d^2/2 over uniform directions.
        d = 2.0
        p = np.tile([(-1.5, 0.25)], (64, 1))
        q = np.tile([(-1.5 + d, 0.25)], (64, 1))
        value = wasserstein(p, q, n_projections=20000, seed=0)
        assert value == pytest.approx(d / math.sqrt(2.0), rel=0.02)

    def test_symmetry(self):
        p, q = cloud(11, 90), cloud(12, 90, spread=1.3)
        forward = wasserstein(p, q)
        backward = wasserstein(q, p)
        assert backward == pytest.approx(forward, rel=0.02)

    def test_subsampling_matches_counts(self):
        p, q = cloud(13, 300), cloud(14, 200)
        forward = wasserstein(p, q, seed=5)
        backward = wasserstein(q, p, seed=5)
        assert math.isfinite(forward)
        assert backward == pytest.approx(forward, rel=0.02)

    @settings(max_examples=40, deadline=None)
    @given(
        vx=st.floats(-3.0, 3.0),
        vy=st.floats(-3.0, 3.0),
        seed=st.integers(0, 50),
    )
    def test_translation_bounded_by_shift_norm(self, vx, vy, seed):
        p = cloud(seed, 30)
        q = cloud(seed + 1000, 30, spread=1.2)
        base = wasserstein(p, q, n_projections=64, seed=0)
        moved = wasserstein(p + np.array([vx, vy]), q, n_projections=64, seed=0)
        shift = math.hypot(vx, vy)
        assert abs(moved - base) <= shift + 1e-9

    def test_deterministic_given_seed(self):
        p, q = cloud(15, 70), cloud(16, 70)
        assert wasserstein(p, q, seed=3) == wasserstein(p, q, seed=3)
        assert wasserstein(p, q, seed=3) != wasserstein(p, q, seed=4)

    def test_projection_count_validated(self):
        with pytest.raises(ConfigError):
            wasserstein(cloud(0, 5), cloud(1, 5), n_projections=0)


class TestMetricsReport:
    def test_non_finite_rejected(self):
        with pytest.raises(ContractError):
            MetricsReport("global", 4, math.nan, 0.0, 0.0)

    def test_mean_must_match_per_sample_errors(self):
        errors = [((0.0, 0.0), 1.0), ((1.0, 1.0), 3.0)]
        MetricsReport("global", 4, 2.0, 0.0, 0.0, errors)
        with pytest.raises(ContractError):
            MetricsReport("global", 4, 2.5, 0.0, 0.0, errors)

    def test_dict_shape(self):
        report = MetricsReport("instance", 3, 0.5, 0.1, 0.2)
        assert report.to_dict() == {
            "strategy": "instance",
            "nfe": 3,
            "mean_mse": 0.5,
            "kl": 0.1,
            "wasserstein": 0.2,
        }


class TestBuildReport:
    def setup_method(self):
        self.starts = cloud(20, 60, spread=3.0)
        self.teacher = cloud(21, 60)
        self.student = self.teacher + 0.05 * cloud(22, 60)

    def test_mean_matches_endpoint_mse(self):
        report = build_report("global", 4, self.starts, self.student, self.teacher)
        mean, _ = endpoint_mse(self.student, self.teacher)
        assert report.mean_mse == mean
        assert len(report.per_sample_errors) == 60

    def test_reference_cloud_defaults_to_teacher(self):
        implicit = build_report("global", 4, self.starts, self.student, self.teacher)
        explicit = build_report(
            "global", 4, self.starts, self.student, self.teacher,
            reference_cloud=self.teacher,
        )
        assert implicit.kl == explicit.kl
        assert implicit.wasserstein == explicit.wasserstein

    def test_starts_must_pair_with_endpoints(self):
        with pytest.raises(ContractError):
            build_report("global", 4, self.starts[:10], self.student, self.teacher)


class TestExportScatter:
    def test_empty_report_writes_header_only(self, tmp_path):
        report = MetricsReport("uniform", 3, 0.0, 0.0, 0.0)
        path = tmp_path / "scatter.csv"
        export_scatter(report, path)
        assert path.read_text() == "x0,x1,error\n"

    def test_row_count_matches_eval_set(self, tmp_path):
        starts = cloud(30, 25, spread=2.0)
        report = build_report("uniform", 3, starts, cloud(31, 25), cloud(32, 25))
        path = tmp_path / "scatter.csv"
        export_scatter(report, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "x0,x1,error"
        assert len(lines) == 26

    def test_round_trip_reproduces_mean(self, tmp_path):
        starts = cloud(33, 100, spread=2.0)
        report = build_report("uniform", 3, starts, cloud(34, 100), cloud(35, 100))
        path = tmp_path / "scatter.csv"
        export_scatter(report, path)
        rows = [line.split(",") for line in path.read_text().splitlines()[1:]]
        errors = [float(r[2]) for r in rows]
        assert sum(errors) / len(errors) == pytest.approx(report.mean_mse, abs=1e-9)
        for (x, _), row in zip(report.per_sample_errors, rows):
            assert float(row[0]) == pytest.approx(x[0], rel=1e-11)
