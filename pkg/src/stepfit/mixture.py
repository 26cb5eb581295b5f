"""Analytic score oracle: a 2-D isotropic Gaussian mixture.

Convolving an isotropic Gaussian mixture with the forward noising kernel
of a schedule keeps it a Gaussian mixture: component i with mean mu_i and
std s_i becomes mean alpha_t * mu_i with variance alpha_t^2 s_i^2 +
sigma_t^2.  That closure makes the score of the noised density exact at
any (x, t), so the mixture stands in for a trained noise-prediction
network.  Densities are accumulated in log space with log-sum-exp
stabilization.

The mixture itself is generated from a recursive binary tree-branch
layout: each branch segment is discretized into equally spaced components
and forks into two shorter children at a fixed opening angle.

Model values are immutable after construction; evaluations are pure; the
samplers take explicit seeds and own their generator state per call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import schedules, tape
from .errors import ConfigError, ContractError, DomainError

_MAX_COMPONENTS = 100_000
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class TreeConfig:
    """Parameters of the recursive tree-branch mixture generator."""

    depth: int = 5
    root_length: float = 1.2
    length_decay: float = 0.68
    branch_angle: float = math.radians(25.0)
    components_per_segment: int = 6
    segment_std: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if self.components_per_segment < 1:
            raise ConfigError(
                f"components_per_segment must be >= 1, got {self.components_per_segment}"
            )
        if not (0.0 < self.length_decay < 1.0):
            raise ConfigError(f"length_decay must lie in (0, 1), got {self.length_decay}")
        if self.segment_std <= 0.0:
            raise ConfigError(f"segment_std must be positive, got {self.segment_std}")
        if self.root_length <= 0.0:
            raise ConfigError(f"root_length must be positive, got {self.root_length}")


@dataclass(frozen=True)
class GaussianMixtureModel:
    """Weighted isotropic Gaussian components in 2-D."""

    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, 2)
    stds: np.ndarray  # (K,)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        m = np.asarray(self.means, dtype=float)
        s = np.asarray(self.stds, dtype=float)
        if w.ndim != 1 or m.shape != (w.size, 2) or s.shape != (w.size,):
            raise ContractError("inconsistent mixture array shapes")
        if abs(float(w.sum()) - 1.0) > 1e-12:
            raise ContractError(f"weights must sum to 1, got {float(w.sum())!r}")
        if not np.all(s > 0.0):
            raise ContractError("all component stds must be positive")
        for arr in (w, m, s):
            arr.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "stds", s)

    @property
    def n_components(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return 2

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "stds": self.stds.tolist(),
        }


def build_tree_mixture(cfg: TreeConfig) -> GaussianMixtureModel:
    """Generate the tree-branch mixture for ``cfg``.

    The root segment grows from the origin along +y.  Every segment places
    ``components_per_segment`` components at fractions j/cps of its length
    and forks into two children rotated by +-branch_angle (plus a small
    seeded jitter), scaled by ``length_decay``.  Levels run 0..depth, so a
    full tree has components_per_segment * (2^(depth+1) - 1) components.
    """
    n_segments = 2 ** (cfg.depth + 1) - 1
    n_total = cfg.components_per_segment * n_segments
    if n_total > _MAX_COMPONENTS:
        raise ConfigError(f"mixture would have {n_total} components (limit {_MAX_COMPONENTS})")

    rng = np.random.default_rng(cfg.seed)
    jitter_scale = 0.1 * cfg.branch_angle
    means = []

    def grow(x0: float, y0: float, heading: float, length: float, level: int):
        ux, uy = math.cos(heading), math.sin(heading)
        cps = cfg.components_per_segment
        for j in range(1, cps + 1):
            frac = j / cps
            means.append((x0 + frac * length * ux, y0 + frac * length * uy))
        if level == cfg.depth:
            return
        x1, y1 = x0 + length * ux, y0 + length * uy
        child_len = length * cfg.length_decay
        for sign in (+1.0, -1.0):
            turn = sign * cfg.branch_angle + rng.normal(0.0, jitter_scale)
            grow(x1, y1, heading + turn, child_len, level + 1)

    grow(0.0, 0.0, math.pi / 2.0, cfg.root_length, 0)

    means_arr = np.asarray(means, dtype=float)
    weights = np.full(n_total, 1.0 / n_total)
    stds = np.full(n_total, cfg.segment_std)
    return GaussianMixtureModel(weights=weights, means=means_arr, stds=stds)


def _component_terms(gmm: GaussianMixtureModel, schedule, x, t):
    """Per-component log-densities and score ingredients of the noised
    mixture at (x, t).  Returns (log_terms, diffs, variances)."""
    a, sig = schedules.alpha_sigma(schedule, t)
    a2 = a * a
    s2 = sig * sig
    x0, x1 = x
    log_terms = []
    diffs = []
    variances = []
    consts = (np.log(gmm.weights) - _LOG_2PI).tolist()
    mu0 = gmm.means[:, 0].tolist()
    mu1 = gmm.means[:, 1].tolist()
    var0 = (gmm.stds**2).tolist()
    for c, m0, m1, v0 in zip(consts, mu0, mu1, var0):
        v = a2 * v0 + s2
        d0 = x0 - a * m0
        d1 = x1 - a * m1
        sq = d0 * d0 + d1 * d1
        lw = (c - tape.log(v)) - sq / (v + v)
        log_terms.append(lw)
        diffs.append((d0, d1))
        variances.append(v)
    return log_terms, diffs, variances


def log_density(gmm: GaussianMixtureModel, schedule, x, t):
    """log q_t(x) of the noised mixture."""
    log_terms, _, _ = _component_terms(gmm, schedule, x, t)
    return tape.logsumexp(log_terms)


def score(gmm: GaussianMixtureModel, schedule, x, t):
    """Exact gradient of log q_t at (x, t), via component responsibilities."""
    log_terms, diffs, variances = _component_terms(gmm, schedule, x, t)
    lse = tape.logsumexp(log_terms)
    terms0 = []
    terms1 = []
    for lw, (d0, d1), v in zip(log_terms, diffs, variances):
        r = tape.exp(lw - lse)
        terms0.append(r * (d0 / v))
        terms1.append(r * (d1 / v))
    return -tape.asum(terms0), -tape.asum(terms1)


def eps_prediction(gmm: GaussianMixtureModel, schedule, x, t):
    """Noise prediction eps = -sigma_t * score(x, t)."""
    _, sig = schedules.alpha_sigma(schedule, t)
    s0, s1 = score(gmm, schedule, x, t)
    neg_sig = -sig
    return neg_sig * s0, neg_sig * s1


def data_prediction(gmm: GaussianMixtureModel, schedule, x, t):
    """Denoised prediction x0_hat = (x - sigma_t * eps)/alpha_t."""
    a, sig = schedules.alpha_sigma(schedule, t)
    if np.any(np.asarray(tape.value(a)) == 0.0):
        raise DomainError("data prediction undefined where alpha(t) = 0")
    e0, e1 = eps_prediction(gmm, schedule, x, t)
    x0, x1 = x
    return (x0 - sig * e0) / a, (x1 - sig * e1) / a


def velocity(gmm: GaussianMixtureModel, schedule, x, t):
    """Velocity-field prediction (eps - x)/(1 - t); needs flow time t < 1."""
    eps = eps_prediction(gmm, schedule, x, t)
    return schedules.eps_to_velocity(eps, x, t)


def sample_data(gmm: GaussianMixtureModel, n: int, seed: int) -> np.ndarray:
    """Draw n exact samples (component choice, then Gaussian); (n, 2)."""
    if n < 1:
        raise ContractError(f"need n >= 1, got {n}")
    rng = np.random.default_rng(seed)
    idx = rng.choice(gmm.n_components, size=n, p=gmm.weights)
    return gmm.means[idx] + gmm.stds[idx, None] * rng.standard_normal((n, 2))


def sample_prior(schedule, n: int, seed: int, mode: str = "gaussian",
                 gmm: GaussianMixtureModel | None = None) -> np.ndarray:
    """Draw n start points at t = T; (n, 2).

    mode "gaussian" (default) draws N(0, sigma_T^2 I), matching how
    sampling is actually initialized.  mode "faithful" draws
    alpha_T * x0 + sigma_T * eps with x0 from the data mixture, i.e. the
    distribution the forward process actually reaches at T.
    """
    if n < 1:
        raise ContractError(f"need n >= 1, got {n}")
    a_T, sigma_T = (float(tape.value(v)) for v in schedules.alpha_sigma(schedule, schedule.T))
    rng = np.random.default_rng(seed)
    if mode == "gaussian":
        return sigma_T * rng.standard_normal((n, 2))
    if mode == "faithful":
        if gmm is None:
            raise ContractError("faithful prior sampling needs the data mixture")
        idx = rng.choice(gmm.n_components, size=n, p=gmm.weights)
        x0 = gmm.means[idx] + gmm.stds[idx, None] * rng.standard_normal((n, 2))
        return a_T * x0 + sigma_T * rng.standard_normal((n, 2))
    raise ContractError(f"unknown prior mode {mode!r}")
