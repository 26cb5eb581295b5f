"""Discretization construction: heuristic grids, head decoding, fitting.

A discretization for an N-step solve is produced one of three ways:

- a closed-form heuristic grid (uniform, log-SNR equispaced, polynomial)
  with identity transforms,
- decoding raw head outputs into knots, time shifts, and output scales,
- fitting those raw heads against teacher endpoints, either one shared
  set for a whole dataset or one set per sample.

Decoding pins the first and last knot to the schedule endpoints as exact
constants; only the interior knots carry gradients.  Interior knots come
from a softmax over the knot head: normalized increments are accumulated
and the cumulative fractions are mapped affinely onto [t0, T], which
keeps the knots strictly increasing for any head values.  Time shifts
decode through b * tanh(o / 2) and output scales through
b * tanh(o / 2) + 1, so identity transforms sit at raw zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import optim, rngs, schedules, solvers, tape
from .errors import ConfigError, ContractError
from .solvers import GeneralDiscretization, SolverSpec

HEURISTICS = ("uniform", "logsnr", "polynomial")


@dataclass(frozen=True)
class Bounds:
    """Decode ranges: |dtau| < time_shift, |gamma - 1| < output_scale."""

    time_shift: float = 0.05
    output_scale: float = 0.05

    def __post_init__(self):
        if self.time_shift < 0.0:
            raise ConfigError("time_shift bound must be >= 0")
        if not 0.0 <= self.output_scale < 1.0:
            raise ConfigError("output_scale bound must lie in [0, 1)")

    def to_dict(self) -> dict:
        return {"time_shift": self.time_shift, "output_scale": self.output_scale}


@dataclass(frozen=True)
class HeadSwitches:
    """Which head groups are learnable; disabled heads decode to identity."""

    tau: bool = True
    dtau: bool = True
    gamma: bool = True

    def any(self) -> bool:
        return self.tau or self.dtau or self.gamma

    def to_dict(self) -> dict:
        return {"tau": self.tau, "dtau": self.dtau, "gamma": self.gamma}


@dataclass(frozen=True)
class RawHeads:
    """Unconstrained head outputs, one triple of length-N tuples."""

    o_tau: tuple
    o_dtau: tuple
    o_gamma: tuple

    def __post_init__(self):
        object.__setattr__(self, "o_tau", tuple(self.o_tau))
        object.__setattr__(self, "o_dtau", tuple(self.o_dtau))
        object.__setattr__(self, "o_gamma", tuple(self.o_gamma))
        n = len(self.o_tau)
        if n < 1:
            raise ContractError("need at least one step")
        if len(self.o_dtau) != n or len(self.o_gamma) != n:
            raise ContractError("head groups must share one length")

    @property
    def n_steps(self) -> int:
        return len(self.o_tau)

    @classmethod
    def zeros(cls, n_steps: int) -> "RawHeads":
        z = (0.0,) * n_steps
        return cls(z, z, z)


def heuristic(kind: str, schedule, n_steps: int, rho: float = 7.0) -> GeneralDiscretization:
    """A baseline discretization with identity transforms.

    Kinds: ``uniform`` (equispaced in t), ``logsnr`` (equispaced in the
    log signal-to-noise ratio), ``polynomial`` (power-law interpolation
    between the endpoints with exponent ``rho``).
    """
    if kind not in HEURISTICS:
        raise ConfigError(f"unknown heuristic {kind!r}; expected one of {HEURISTICS}")
    if n_steps < 1:
        raise ConfigError(f"need n_steps >= 1, got {n_steps}")
    t0, big_t = schedule.t0, schedule.T
    if kind == "uniform":
        taus = schedules.uniform_knots(schedule, n_steps)
    elif kind == "logsnr":
        lam_lo = schedules.log_snr(schedule, t0)
        lam_hi = schedules.log_snr(schedule, big_t)
        inner = []
        for i in range(1, n_steps):
            lam = lam_lo + (i / n_steps) * (lam_hi - lam_lo)
            inner.append(schedules.time_from_log_snr(schedule, lam))
        taus = (t0, *inner, big_t)
    else:
        if rho <= 0.0:
            raise ConfigError(f"need rho > 0, got {rho}")
        lo = t0 ** (1.0 / rho)
        hi = big_t ** (1.0 / rho)
        inner = [(lo + (i / n_steps) * (hi - lo)) ** rho for i in range(1, n_steps)]
        taus = (t0, *inner, big_t)
    xi = GeneralDiscretization(
        taus=taus, dtaus=(0.0,) * n_steps, gammas=(1.0,) * n_steps
    )
    xi.check_monotone()
    return xi


def decode_heads(raw: RawHeads, bounds: Bounds, schedule, n_steps: int) -> GeneralDiscretization:
    """Map raw head outputs to a valid discretization.

    Entries may be floats, per-lane arrays, or tape variables; the
    decoded entries have matching types.  The endpoint knots are exact
    constants with no gradient.
    """
    if raw.n_steps != n_steps:
        raise ContractError(f"raw heads carry {raw.n_steps} steps, expected {n_steps}")
    t0, big_t = schedule.t0, schedule.T
    span = big_t - t0
    if n_steps == 1:
        taus = (t0, big_t)
    else:
        lse = tape.logsumexp(list(raw.o_tau))
        cums = []
        acc = None
        for o in raw.o_tau:
            inc = tape.exp(o - lse)
            acc = inc if acc is None else acc + inc
            cums.append(acc)
        total = cums[-1]
        inner = [t0 + span * (cums[j] / total) for j in range(n_steps - 1)]
        taus = (t0, *inner, big_t)
    dtaus = tuple(bounds.time_shift * tape.tanh(o * 0.5) for o in raw.o_dtau)
    gammas = tuple(bounds.output_scale * tape.tanh(o * 0.5) + 1.0 for o in raw.o_gamma)
    return GeneralDiscretization(taus=taus, dtaus=dtaus, gammas=gammas)


def _teacher_arrays(teacher) -> tuple[np.ndarray, np.ndarray]:
    try:
        starts, targets = teacher
    except (TypeError, ValueError) as exc:
        raise ContractError("teacher must be a (starts, targets) array pair") from exc
    starts = np.asarray(starts, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if starts.ndim != 2 or starts.shape[1] != 2 or starts.shape != targets.shape:
        raise ContractError(
            f"teacher arrays must share shape (n, 2), got {starts.shape} and {targets.shape}"
        )
    if len(starts) < 1:
        raise ContractError("teacher set is empty")
    return starts, targets


def _init_params(n_steps, switches, init_raw, lanes=None) -> dict[str, np.ndarray]:
    """Zero (or warm-started) raw parameter arrays for the enabled heads."""
    if not switches.any():
        raise ConfigError("at least one head group must be enabled")
    shape = (n_steps,) if lanes is None else (lanes, n_steps)
    params = {}
    for name, on in (("tau", switches.tau), ("dtau", switches.dtau), ("gamma", switches.gamma)):
        if not on:
            continue
        base = np.zeros(shape)
        if init_raw is not None and name in init_raw:
            warm = np.asarray(init_raw[name], dtype=float)
            if warm.shape[-1] != n_steps:
                raise ContractError(f"warm start for {name!r} has wrong length")
            base = base + warm
        params[name] = base
    return params


def _heads_from(entries: dict, n_steps: int) -> RawHeads:
    def pick(name):
        got = entries.get(name)
        return tuple(got) if got is not None else (0.0,) * n_steps

    return RawHeads(o_tau=pick("tau"), o_dtau=pick("dtau"), o_gamma=pick("gamma"))


def _leaf_heads(tp: tape.Tape, params: dict, n_steps: int, lanes: bool) -> dict:
    """Tape leaves per step; copies detach the leaves from in-place updates."""
    leaves = {}
    for name, arr in params.items():
        if lanes:
            leaves[name] = [tp.leaf(arr[:, j].copy()) for j in range(n_steps)]
        else:
            leaves[name] = [tp.leaf(float(arr[j])) for j in range(n_steps)]
    return leaves


def decode_params(params: dict, bounds: Bounds, schedule, n_steps: int) -> GeneralDiscretization:
    """Decode plain parameter arrays (1-D shared or 2-D per-lane)."""
    entries = {}
    for name, arr in params.items():
        arr = np.asarray(arr, dtype=float)
        if arr.ndim == 2:
            entries[name] = [arr[:, j] for j in range(n_steps)]
        else:
            entries[name] = [float(arr[j]) for j in range(n_steps)]
    return decode_heads(_heads_from(entries, n_steps), bounds, schedule, n_steps)


def evaluate_params(spec, oracle, schedule, params, n_steps, bounds, starts, targets) -> np.ndarray:
    """Per-sample endpoint losses of the decoded discretization, eagerly."""
    xi = decode_params(params, bounds, schedule, n_steps)
    end = solvers.solve(spec, oracle, schedule, (starts[:, 0], starts[:, 1]), xi)
    return np.asarray(optim.mse_pair(end, targets[:, 0], targets[:, 1]), dtype=float)


@dataclass
class GlobalFit:
    """One shared discretization fitted over a teacher set."""

    raw: dict[str, np.ndarray]
    xi: GeneralDiscretization
    initial_loss: float
    final_loss: float
    trace: list
    state: optim.LoopState


@dataclass
class OverfitFit:
    """One discretization per teacher sample."""

    raw: dict[str, np.ndarray]  # (n, N) per enabled head
    bounds: Bounds
    schedule: object
    n_steps: int
    initial_losses: np.ndarray
    final_losses: np.ndarray
    traces: list

    def xi_for(self, i: int) -> GeneralDiscretization:
        row = {name: arr[i] for name, arr in self.raw.items()}
        return decode_params(row, self.bounds, self.schedule, self.n_steps)

    @property
    def mean_initial_loss(self) -> float:
        return float(self.initial_losses.mean())

    @property
    def mean_final_loss(self) -> float:
        return float(self.final_losses.mean())


def optimize_global(
    spec: SolverSpec,
    oracle,
    schedule,
    teacher,
    n_steps: int,
    cfg: optim.TrainConfig,
    *,
    bounds: Bounds | None = None,
    switches: HeadSwitches | None = None,
    init_raw: dict | None = None,
) -> GlobalFit:
    """Fit one shared set of raw heads to minimize the mean endpoint loss.

    ``teacher`` is a ``(starts, targets)`` pair of (n, 2) arrays.  Each
    iteration draws ``cfg.batch_size`` samples with replacement from a
    per-iteration derived stream, records one batched solve, and takes an
    Adam step on the mean loss.
    """
    starts, targets = _teacher_arrays(teacher)
    bounds = bounds if bounds is not None else Bounds()
    switches = switches if switches is not None else HeadSwitches()
    params = _init_params(n_steps, switches, init_raw)
    initial = float(
        evaluate_params(spec, oracle, schedule, params, n_steps, bounds, starts, targets).mean()
    )
    n = len(starts)
    draw = min(cfg.batch_size, n)

    def step(cur, it):
        rng = rngs.rng_for(cfg.seed, f"batch:{it}")
        idx = rng.integers(0, n, size=draw)
        tp = tape.Tape()
        leaves = _leaf_heads(tp, cur, n_steps, lanes=False)
        xi = decode_heads(_heads_from(leaves, n_steps), bounds, schedule, n_steps)
        end = solvers.solve(spec, oracle, schedule, (starts[idx, 0], starts[idx, 1]), xi)
        lane = optim.mse_pair(end, targets[idx, 0], targets[idx, 1])
        loss, seed = optim.mean_loss(tp, lane)
        grad = tp.backward(lane, seed=seed)
        grads = {
            name: np.array([float(grad.wrt(v)) for v in vs]) for name, vs in leaves.items()
        }
        return loss, grads

    res = optim.adam_loop(params, step, cfg)
    final = float(
        evaluate_params(spec, oracle, schedule, res.params, n_steps, bounds, starts, targets).mean()
    )
    xi = decode_params(res.params, bounds, schedule, n_steps)
    return GlobalFit(
        raw=res.params,
        xi=xi,
        initial_loss=initial,
        final_loss=final,
        trace=res.trace,
        state=res.state,
    )


def optimize_overfit(
    spec: SolverSpec,
    oracle,
    schedule,
    teacher,
    n_steps: int,
    cfg: optim.TrainConfig,
    *,
    bounds: Bounds | None = None,
    switches: HeadSwitches | None = None,
    init_raw: dict | None = None,
    chunk_size: int = 256,
) -> OverfitFit:
    """Fit an independent set of raw heads per teacher sample.

    Every sample descends on its own full-batch loss each iteration;
    lanes are fitted together in chunks of ``chunk_size`` to bound tape
    memory.  ``cfg.batch_size`` is ignored here.
    """
    starts, targets = _teacher_arrays(teacher)
    bounds = bounds if bounds is not None else Bounds()
    switches = switches if switches is not None else HeadSwitches()
    if chunk_size < 1:
        raise ConfigError("chunk_size must be >= 1")
    n = len(starts)
    probe = _init_params(n_steps, switches, init_raw)  # validates switches/init
    raw = {name: np.zeros((n, n_steps)) for name in probe}
    initial_losses = np.empty(n)
    final_losses = np.empty(n)
    traces = []
    for lo in range(0, n, chunk_size):
        hi = min(lo + chunk_size, n)
        lanes = hi - lo
        params = _init_params(n_steps, switches, init_raw, lanes=lanes)
        s_chunk = starts[lo:hi]
        t_chunk = targets[lo:hi]
        initial_losses[lo:hi] = evaluate_params(
            spec, oracle, schedule, params, n_steps, bounds, s_chunk, t_chunk
        )

        def step(cur, it, s_chunk=s_chunk, t_chunk=t_chunk):
            tp = tape.Tape()
            leaves = _leaf_heads(tp, cur, n_steps, lanes=True)
            xi = decode_heads(_heads_from(leaves, n_steps), bounds, schedule, n_steps)
            end = solvers.solve(
                spec, oracle, schedule, (s_chunk[:, 0], s_chunk[:, 1]), xi
            )
            lane = optim.mse_pair(end, t_chunk[:, 0], t_chunk[:, 1])
            loss = float(np.asarray(tape.value(lane)).mean())
            grad = tp.backward(lane, seed=1.0)
            grads = {
                name: np.stack([np.asarray(grad.wrt(v)) for v in vs], axis=1)
                for name, vs in leaves.items()
            }
            return loss, grads

        res = optim.adam_loop(params, step, cfg)
        for name in res.params:
            raw[name][lo:hi] = res.params[name]
        final_losses[lo:hi] = evaluate_params(
            spec, oracle, schedule, res.params, n_steps, bounds, s_chunk, t_chunk
        )
        traces.append(res.trace)
    return OverfitFit(
        raw=raw,
        bounds=bounds,
        schedule=schedule,
        n_steps=n_steps,
        initial_losses=initial_losses,
        final_losses=final_losses,
        traces=traces,
    )


def optimize_per_instance(
    spec: SolverSpec,
    oracle,
    schedule,
    x_start,
    x_target,
    n_steps: int,
    cfg: optim.TrainConfig,
    *,
    bounds: Bounds | None = None,
    switches: HeadSwitches | None = None,
    init_raw: dict | None = None,
) -> GlobalFit:
    """Fit raw heads to a single start/target pair."""
    starts = np.asarray(x_start, dtype=float).reshape(1, 2)
    targets = np.asarray(x_target, dtype=float).reshape(1, 2)
    fit = optimize_overfit(
        spec,
        oracle,
        schedule,
        (starts, targets),
        n_steps,
        cfg,
        bounds=bounds,
        switches=switches,
        init_raw=init_raw,
        chunk_size=1,
    )
    raw = {name: arr[0] for name, arr in fit.raw.items()}
    return GlobalFit(
        raw=raw,
        xi=fit.xi_for(0),
        initial_loss=float(fit.initial_losses[0]),
        final_loss=float(fit.final_losses[0]),
        trace=fit.traces[0],
        state=None,
    )
