"""Evaluation metrics: endpoint error, histogram KL, sliced Wasserstein.

The three axes score a sampling strategy per instance (endpoint mean
squared error against teacher endpoints) and distributionally (KL
divergence and sliced 2-Wasserstein between the produced cloud and a
reference cloud).  Both distributional estimators are deterministic
given their configuration: KL uses a fixed smoothed histogram over the
padded union bounding box, and the Wasserstein estimate averages exact
1-D transport costs over a fixed-seed set of unit directions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rngs, textio
from .errors import ConfigError, ContractError


@dataclass(frozen=True)
class GridConfig:
    """Histogram settings for the KL estimate."""

    bins: int = 100
    pad_fraction: float = 0.1
    smoothing: float = 1e-6

    def __post_init__(self):
        if self.bins < 1:
            raise ConfigError("bins must be >= 1")
        if self.pad_fraction < 0.0:
            raise ConfigError("pad_fraction must be >= 0")
        if self.smoothing <= 0.0:
            raise ConfigError("smoothing must be positive")

    def to_dict(self) -> dict:
        return {
            "bins": self.bins,
            "pad_fraction": self.pad_fraction,
            "smoothing": self.smoothing,
        }


def _as_cloud(samples, name: str) -> np.ndarray:
    arr = np.asarray(samples, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or len(arr) < 1:
        raise ContractError(f"{name} must be a non-empty (n, 2) array")
    return arr


def endpoint_mse(student_endpoints, teacher_endpoints) -> tuple[float, np.ndarray]:
    """Mean and per-sample squared distance averaged over coordinates."""
    student = _as_cloud(student_endpoints, "student_endpoints")
    teacher = _as_cloud(teacher_endpoints, "teacher_endpoints")
    if student.shape != teacher.shape:
        raise ContractError(
            f"paired lists must match, got {student.shape} vs {teacher.shape}"
        )
    per_sample = ((student - teacher) ** 2).mean(axis=1)
    return float(per_sample.mean()), per_sample


def _padded_union_box(p: np.ndarray, q: np.ndarray, pad: float):
    both = np.concatenate([p, q], axis=0)
    lo = both.min(axis=0)
    hi = both.max(axis=0)
    width = hi - lo
    # A degenerate axis gets a unit window so the histogram stays valid.
    width = np.where(width > 0.0, width, 1.0)
    return lo - pad * width, hi + pad * width


def kl_divergence(samples_p, samples_q, grid_cfg: GridConfig | None = None) -> float:
    """KL(P || Q) between smoothed histograms on a shared fixed grid.

    The grid covers the union bounding box of both clouds, padded by
    ``pad_fraction`` of each axis range on each side; ``smoothing`` is
    added to every bin count before normalization.
    """
    cfg = grid_cfg if grid_cfg is not None else GridConfig()
    p = _as_cloud(samples_p, "samples_p")
    q = _as_cloud(samples_q, "samples_q")
    lo, hi = _padded_union_box(p, q, cfg.pad_fraction)
    edges_x = np.linspace(lo[0], hi[0], cfg.bins + 1)
    edges_y = np.linspace(lo[1], hi[1], cfg.bins + 1)
    hist_p, _, _ = np.histogram2d(p[:, 0], p[:, 1], bins=(edges_x, edges_y))
    hist_q, _, _ = np.histogram2d(q[:, 0], q[:, 1], bins=(edges_x, edges_y))
    hist_p += cfg.smoothing
    hist_q += cfg.smoothing
    hist_p /= hist_p.sum()
    hist_q /= hist_q.sum()
    return float(np.sum(hist_p * np.log(hist_p / hist_q)))


def _unit_directions(n_projections: int, seed: int) -> np.ndarray:
    rng = rngs.rng_for(seed, "sliced-w2:directions")
    vecs = rng.standard_normal((n_projections, 2))
    norms = np.linalg.norm(vecs, axis=1, keepdims=True)
    # Resample any numerically null draw (probability ~0, determinism kept).
    while np.any(norms == 0.0):
        bad = norms[:, 0] == 0.0
        vecs[bad] = rng.standard_normal((int(bad.sum()), 2))
        norms = np.linalg.norm(vecs, axis=1, keepdims=True)
    return vecs / norms


def _match_counts(p: np.ndarray, q: np.ndarray, seed: int):
    if len(p) == len(q):
        return p, q
    rng = rngs.rng_for(seed, "sliced-w2:subsample")
    if len(p) > len(q):
        keep = rng.choice(len(p), size=len(q), replace=False)
        return p[np.sort(keep)], q
    keep = rng.choice(len(q), size=len(p), replace=False)
    return p, q[np.sort(keep)]


def wasserstein(samples_p, samples_q, n_projections: int = 128, seed: int = 0) -> float:
    """Sliced 2-Wasserstein distance between two clouds.

    Projects both clouds onto fixed-seed unit directions, takes the
    exact 1-D quadratic transport cost between sorted projections, and
    returns the square root of the cost averaged over directions.  The
    larger cloud is deterministically subsampled to match counts.
    """
    if n_projections < 1:
        raise ConfigError("n_projections must be >= 1")
    p = _as_cloud(samples_p, "samples_p")
    q = _as_cloud(samples_q, "samples_q")
    p, q = _match_counts(p, q, seed)
    dirs = _unit_directions(n_projections, seed)
    proj_p = np.sort(p @ dirs.T, axis=0)  # (n, n_projections)
    proj_q = np.sort(q @ dirs.T, axis=0)
    costs = ((proj_p - proj_q) ** 2).mean(axis=0)
    return float(math.sqrt(costs.mean()))


@dataclass
class MetricsReport:
    """One strategy's scores at one evaluation budget."""

    strategy: str
    nfe: int
    mean_mse: float
    kl: float
    wasserstein: float
    per_sample_errors: list = field(default_factory=list)  # (x_start, error) pairs

    def __post_init__(self):
        values = [self.mean_mse, self.kl, self.wasserstein]
        if not all(math.isfinite(v) for v in values):
            raise ContractError(f"non-finite metrics: {values}")
        if self.per_sample_errors:
            mean = sum(e for _, e in self.per_sample_errors) / len(self.per_sample_errors)
            if abs(mean - self.mean_mse) > 1e-12 * max(1.0, abs(mean)):
                raise ContractError("mean_mse disagrees with per-sample errors")

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "nfe": self.nfe,
            "mean_mse": self.mean_mse,
            "kl": self.kl,
            "wasserstein": self.wasserstein,
        }


def build_report(
    strategy: str,
    nfe: int,
    starts,
    student_endpoints,
    teacher_endpoints,
    reference_cloud=None,
    grid_cfg: GridConfig | None = None,
    n_projections: int = 128,
    seed: int = 0,
) -> MetricsReport:
    """Assemble the full report for one strategy.

    MSE compares endpoints pairwise; KL and Wasserstein compare the
    student cloud against ``reference_cloud`` (the teacher endpoints
    when not given).
    """
    starts = _as_cloud(starts, "starts")
    mean, per_sample = endpoint_mse(student_endpoints, teacher_endpoints)
    if len(starts) != len(per_sample):
        raise ContractError("starts and endpoints must pair up")
    cloud = teacher_endpoints if reference_cloud is None else reference_cloud
    return MetricsReport(
        strategy=strategy,
        nfe=nfe,
        mean_mse=mean,
        kl=kl_divergence(student_endpoints, cloud, grid_cfg),
        wasserstein=wasserstein(student_endpoints, cloud, n_projections, seed),
        per_sample_errors=[
            ((float(x[0]), float(x[1])), float(e)) for x, e in zip(starts, per_sample)
        ],
    )


def export_scatter(report: MetricsReport, path) -> None:
    """Write (x_start_0, x_start_1, error) rows for the error-map figure."""
    lines = ["x0,x1,error"]
    for (x0, x1), err in report.per_sample_errors:
        lines.append(textio.format_row((x0, x1, err)))
    textio.write_text(path, "\n".join(lines))
