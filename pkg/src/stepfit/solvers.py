"""ODE integrators over a general discretization.

A solve runs over ascending knots tau_0 < ... < tau_N (tau_0 and tau_N
pinned to the schedule's t0 and T) from the noise end down to the data
end: step k moves the state from tau_k to tau_{k-1} using one oracle
evaluation at tau_k.  Each evaluation may be transformed by a per-step
time shift (evaluate at clamp(tau_k + dtau_k)) and output scale (multiply
the noise prediction by gamma_k), while the step geometry itself stays at
the base tau_k.  Exactly N oracle evaluations are consumed.

Two families:

- ``euler``: first-order steps on the probability-flow derivative.
- ``ipndm``: the improved pseudo numerical multistep scheme, i.e.
  Adams-Bashforth combinations of the stored derivative history with
  classical coefficients, warm-starting at lower orders while the history
  fills.

Everything is written against the tape dispatch helpers, so a solve runs
eagerly on floats/arrays and identically when recorded for
differentiation.  solve is pure given immutable inputs; any reduction
over a batch of solves must accumulate in ascending sample order for
determinism.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import mixture, schedules, tape
from .errors import ConfigError, ContractError

FAMILIES = ("euler", "ipndm")

# Adams-Bashforth coefficients by order; current derivative first.
_AB_COEFFS = {
    1: (1.0,),
    2: (3.0 / 2.0, -1.0 / 2.0),
    3: (23.0 / 12.0, -16.0 / 12.0, 5.0 / 12.0),
    4: (55.0 / 24.0, -59.0 / 24.0, 37.0 / 24.0, -9.0 / 24.0),
}


@dataclass(frozen=True)
class SolverSpec:
    """Integrator family and maximum multistep order."""

    family: str = "ipndm"
    max_order: int = 4

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown solver family {self.family!r}; expected {FAMILIES}")
        if self.family == "euler" and self.max_order != 1:
            raise ConfigError("euler is first order; max_order must be 1")
        if not 1 <= self.max_order <= 4:
            raise ConfigError(f"max_order must lie in [1, 4], got {self.max_order}")


@dataclass(frozen=True)
class GeneralDiscretization:
    """The per-run discretization consumed by a solver.

    ``taus`` holds N+1 ascending knots with taus[0] = t0 and taus[-1] = T;
    ``dtaus[k]`` and ``gammas[k]`` transform the evaluation taken at
    taus[k+1], so each has length N.  Entries may be floats, lane arrays,
    or tape variables.
    """

    taus: tuple
    dtaus: tuple
    gammas: tuple

    def __post_init__(self):
        object.__setattr__(self, "taus", tuple(self.taus))
        object.__setattr__(self, "dtaus", tuple(self.dtaus))
        object.__setattr__(self, "gammas", tuple(self.gammas))
        n = len(self.taus) - 1
        if n < 1:
            raise ContractError("need at least two knots")
        if len(self.dtaus) != n or len(self.gammas) != n:
            raise ContractError(
                f"need {n} dtaus and gammas, got {len(self.dtaus)} and {len(self.gammas)}"
            )

    @property
    def n_steps(self) -> int:
        return len(self.taus) - 1

    def check_monotone(self):
        """Validate strict knot monotonicity (numeric entries only)."""
        vals = [np.asarray(tape.value(t)) for t in self.taus]
        for lo, hi in zip(vals[:-1], vals[1:]):
            if not np.all(hi > lo):
                raise ContractError(f"knots must increase strictly, got {vals!r}")

    def to_dict(self) -> dict:
        return {
            "taus": [float(tape.value(t)) for t in self.taus],
            "dtaus": [float(tape.value(d)) for d in self.dtaus],
            "gammas": [float(tape.value(g)) for g in self.gammas],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeneralDiscretization":
        return cls(taus=tuple(d["taus"]), dtaus=tuple(d["dtaus"]), gammas=tuple(d["gammas"]))


def _eval_eps(oracle, schedule, x, t):
    """Noise prediction from either a mixture model or a callable oracle."""
    if callable(oracle):
        return oracle(x, t)
    return mixture.eps_prediction(oracle, schedule, x, t)


def transformed_eval(oracle, schedule, x, n: int, xi: GeneralDiscretization):
    """The transformed evaluation for step n in [1, N]:
    gamma_n * eps(x, clamp(tau_n + dtau_n, t0, T))."""
    if not 1 <= n <= xi.n_steps:
        raise ContractError(f"step index {n} outside [1, {xi.n_steps}]")
    tau = xi.taus[n]
    dtau = xi.dtaus[n - 1]
    gamma = xi.gammas[n - 1]
    t_eval = _shifted_time(schedule, tau, dtau)
    e0, e1 = _eval_eps(oracle, schedule, x, t_eval)
    return gamma * e0, gamma * e1


def _shifted_time(schedule, tau, dtau):
    # A zero shift is the identity: the knot already lies in [t0, T], so
    # the clamp would change neither the value nor the gradient.
    if isinstance(dtau, (int, float)) and dtau == 0.0:
        return tau
    return tape.clamp(tau + dtau, schedule.t0, schedule.T)


def pf_ode_derivative(oracle, schedule, x, t, eps=None):
    """The probability-flow derivative f(t) x - 0.5 g2(t) score(x, t),
    assembled from the noise prediction via score = -eps/sigma."""
    f, g2 = schedules.ode_coefficients(schedule, t)
    _, sig = schedules.alpha_sigma(schedule, t)
    if eps is None:
        eps = _eval_eps(oracle, schedule, x, t)
    scale = g2 / (sig + sig)
    x0, x1 = x
    return f * x0 + scale * eps[0], f * x1 + scale * eps[1]


def solve(spec: SolverSpec, oracle, schedule, x_T, xi: GeneralDiscretization, c=None):
    """Integrate from x_T at tau_N = T down to tau_0 = t0.

    ``oracle`` is a mixture model or a callable (x, t) -> eps pair; ``c``
    is an optional condition, unused by analytic oracles and accepted for
    interface parity with conditional ones.  Returns the endpoint as a
    coordinate pair.  Consumes exactly N oracle evaluations.
    """
    xi.check_monotone()
    n_steps = xi.n_steps
    x = tuple(x_T)
    if len(x) != 2:
        raise ContractError("state must be a coordinate pair")
    history = []  # previous derivatives, most recent first
    for k in range(n_steps, 0, -1):
        tau = xi.taus[k]
        dtau = xi.dtaus[k - 1]
        gamma = xi.gammas[k - 1]
        t_eval = _shifted_time(schedule, tau, dtau)
        e0, e1 = _eval_eps(oracle, schedule, x, t_eval)
        d_cur = pf_ode_derivative(oracle, schedule, x, tau, eps=(gamma * e0, gamma * e1))
        if spec.family == "euler":
            d_step = d_cur
        else:
            order = min(len(history) + 1, spec.max_order)
            coeffs = _AB_COEFFS[order]
            if order == 1:
                d_step = d_cur
            else:
                d_step = tuple(
                    tape.asum([coeffs[0] * d_cur[c_]]
                              + [coeffs[j] * history[j - 1][c_] for j in range(1, order)])
                    for c_ in (0, 1)
                )
            history.insert(0, d_cur)
            if len(history) >= spec.max_order:
                history = history[: spec.max_order - 1]
        h = xi.taus[k - 1] - tau
        x = (x[0] + h * d_step[0], x[1] + h * d_step[1])
    return x


def reference_solve(oracle, schedule, x_T, nfe: int):
    """First-order solve on the uniform grid with identity transforms;
    the high-step teacher and convergence baseline."""
    if nfe < 1:
        raise ContractError(f"need nfe >= 1, got {nfe}")
    xi = GeneralDiscretization(
        taus=schedules.uniform_knots(schedule, nfe),
        dtaus=(0.0,) * nfe,
        gammas=(1.0,) * nfe,
    )
    return solve(SolverSpec(family="euler", max_order=1), oracle, schedule, x_T, xi)


class CountingOracle:
    """Callable oracle wrapper that counts evaluations."""

    def __init__(self, gmm, schedule):
        self.gmm = gmm
        self.schedule = schedule
        self.calls = 0

    def __call__(self, x, t):
        self.calls += 1
        return mixture.eps_prediction(self.gmm, self.schedule, x, t)
