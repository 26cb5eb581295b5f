"""Noise schedules for probability-flow ODE sampling.

Three schedule kinds are supported, each defined by its signal scale
``alpha(t)`` and noise scale ``sigma(t)``:

- ``ve``: alpha = 1, sigma = t (variance exploding).
- ``ot``: alpha = 1 - t, sigma = t (flow-matching linear interpolation).
- ``vp``: alpha = exp(-0.5 * int_0^t beta), sigma = sqrt(1 - alpha^2),
  with a quadratic-in-sqrt beta whose integral has a closed form.

All evaluation functions accept either plain floats/arrays or tape ``Var``
values for the time argument, so the same code serves eager evaluation and
recorded differentiation.  Pure functions over immutable schedule values;
safe for unrestricted concurrent use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tape
from .errors import ConfigError, DomainError

KINDS = ("ve", "ot", "vp")

# Continuous-time beta(t) carries the discrete-step count of the ancestral
# parameterization it descends from; without it the terminal SNR would be
# off by three orders of magnitude.
_VP_STEPS = 1000.0

_DEFAULT_ENDPOINTS = {
    "ve": (80.0, 0.002),
    "ot": (0.988, 0.002),
    "vp": (1.0, 1e-3),
}


@dataclass(frozen=True)
class NoiseSchedule:
    """A noise schedule with sampling time running from t0 up to T."""

    kind: str
    T: float
    t0: float
    vp_beta: tuple = (0.00085, 0.012)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown schedule kind {self.kind!r}; expected one of {KINDS}")
        if not (self.t0 > 0.0 and self.T > self.t0):
            raise ConfigError(f"need 0 < t0 < T, got t0={self.t0}, T={self.T}")
        if self.kind == "ot" and self.T >= 1.0:
            raise ConfigError(f"ot schedule needs T < 1, got T={self.T}")
        if self.kind == "vp" and not all(b > 0.0 for b in self.vp_beta):
            raise ConfigError(f"vp beta parameters must be positive, got {self.vp_beta}")

    @property
    def sigma_T(self) -> float:
        return float(tape.value(alpha_sigma(self, self.T)[1]))


def make_schedule(kind: str, T: float | None = None, t0: float | None = None,
                  vp_beta: tuple = (0.00085, 0.012)) -> NoiseSchedule:
    """Build a schedule, filling endpoints with the conventional defaults."""
    if kind not in KINDS:
        raise ConfigError(f"unknown schedule kind {kind!r}; expected one of {KINDS}")
    dT, dt0 = _DEFAULT_ENDPOINTS[kind]
    return NoiseSchedule(kind=kind, T=dT if T is None else float(T),
                         t0=dt0 if t0 is None else float(t0), vp_beta=tuple(vp_beta))


def _check_time(s: NoiseSchedule, t, slack: float = 1e-9):
    v = np.asarray(tape.value(t))
    if not (np.all(v >= s.t0 - slack) and np.all(v <= s.T + slack)):
        raise DomainError(
            f"time out of range for {s.kind} schedule: need [{s.t0}, {s.T}], got {v!r}"
        )


def _vp_u(s: NoiseSchedule, t):
    """Helper u(t) = sqrt(b_min) + (sqrt(b_max) - sqrt(b_min)) * t."""
    ra, rb = math.sqrt(s.vp_beta[0]), math.sqrt(s.vp_beta[1])
    return ra + (rb - ra) * t, ra, rb


def _vp_beta(s: NoiseSchedule, t):
    u, _, _ = _vp_u(s, t)
    return _VP_STEPS * u * u


def _vp_integral_beta(s: NoiseSchedule, t):
    """Closed form of int_0^t beta(s) ds for the vp schedule."""
    u, ra, rb = _vp_u(s, t)
    return _VP_STEPS * (u * u * u - ra**3) / (3.0 * (rb - ra))


def alpha_sigma(s: NoiseSchedule, t):
    """Return (alpha(t), sigma(t)); t must lie in [t0, T]."""
    _check_time(s, t)
    if s.kind == "ve":
        return 1.0, t
    if s.kind == "ot":
        return 1.0 - t, t
    a = tape.exp(-0.5 * _vp_integral_beta(s, t))
    return a, tape.sqrt(1.0 - a * a)


def log_snr(s: NoiseSchedule, t):
    """Return lambda(t) = log(alpha/sigma), strictly decreasing in t."""
    _check_time(s, t)
    if s.kind == "ve":
        return -tape.log(t)
    a, sig = alpha_sigma(s, t)
    return tape.log(a / sig)


def time_from_log_snr(s: NoiseSchedule, lam: float) -> float:
    """Invert log_snr on [t0, T] (closed form for ve/ot, bisection for vp)."""
    if s.kind == "ve":
        t = math.exp(-lam)
    elif s.kind == "ot":
        # lam = log((1 - t)/t)  =>  t = 1/(1 + e^lam)
        t = 1.0 / (1.0 + math.exp(lam))
    else:
        lo, hi = s.t0, s.T
        flo = float(log_snr(s, lo))
        fhi = float(log_snr(s, hi))
        if not (fhi - 1e-12 <= lam <= flo + 1e-12):
            raise DomainError(f"log-SNR {lam} outside [{fhi}, {flo}] for vp schedule")
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if hi - lo <= 1e-12:
                break
            if float(log_snr(s, mid)) > lam:
                lo = mid
            else:
                hi = mid
        t = 0.5 * (lo + hi)
    return float(min(max(t, s.t0), s.T))


def ode_coefficients(s: NoiseSchedule, t):
    """Return (f(t), g2(t)) of the probability-flow ODE
    dx = [f(t) x - 0.5 g2(t) score(x, t)] dt, from the analytic derivatives
    of alpha and sigma for the schedule kind."""
    _check_time(s, t)
    if s.kind == "ve":
        # alpha' = 0, sigma' = 1: f = 0, g2 = 2 t
        return 0.0, 2.0 * t
    if s.kind == "ot":
        # alpha' = -1, sigma' = 1: f = -1/(1-t), g2 = 2t/(1-t)
        one_minus = 1.0 - t
        if np.any(np.asarray(tape.value(one_minus)) <= 0.0):
            raise DomainError("ot drift has a pole at t = 1")
        return -1.0 / one_minus, (2.0 * t) / one_minus
    beta = _vp_beta(s, t)
    return -0.5 * beta, beta


def uniform_knots(s: NoiseSchedule, n: int) -> tuple:
    """n+1 uniformly spaced times from t0 to T with exact endpoints."""
    if n < 1:
        raise DomainError(f"need at least one step, got {n}")
    inner = [s.t0 + (i / n) * (s.T - s.t0) for i in range(1, n)]
    return (s.t0, *inner, s.T)


def ve_to_ot(t_ve, x_ve):
    """Map a variance-exploding state to the flow-matching chart:
    t -> t/(1+t), x -> x/(1+t).  Exactly inverted by ``ot_to_ve``."""
    if np.any(np.asarray(tape.value(t_ve)) < 0.0):
        raise DomainError("ve time must be non-negative")
    scale = 1.0 + t_ve
    return t_ve / scale, tuple(c / scale for c in x_ve)


def ot_to_ve(t_ot, x_ot):
    """Inverse of ``ve_to_ot``: t -> t/(1-t), x -> x/(1-t)."""
    if np.any(np.asarray(tape.value(t_ot)) >= 1.0):
        raise DomainError("ot time must be below 1")
    scale = 1.0 - t_ot
    return t_ot / scale, tuple(c / scale for c in x_ot)


def eps_to_velocity(eps, x_ot, t_ot):
    """Convert a noise prediction at (x, t) in the flow chart to the
    velocity-field prediction (eps - x)/(1 - t)."""
    if np.any(np.asarray(tape.value(t_ot)) >= 1.0):
        raise DomainError("velocity conversion needs t < 1")
    denom = 1.0 - t_ot
    return tuple((e - c) / denom for e, c in zip(eps, x_ot))
