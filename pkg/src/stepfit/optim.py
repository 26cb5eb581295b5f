"""Shared optimization loop: Adam, cosine learning rate, weight averaging.

Every fitting path in the package (global step-size fitting, per-instance
overfitting, network training) runs the same deterministic loop so resume
and rerun behaviour is identical everywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import tape
from .errors import ConfigError, TrainingError


@dataclass(frozen=True)
class TrainConfig:
    """Hyper-parameters for one Adam run.

    Parameters
    ----------
    lr_max, lr_min:
        Endpoints of the cosine learning-rate ramp.
    batch_size:
        Lanes drawn per iteration when the caller samples batches.
    iterations:
        Total optimizer steps.
    ema_fraction:
        Per-step blend weight of the averaged-weights tracker; the
        average moves this fraction of the way toward the current
        weights after every update.
    seed:
        Root seed for batch sampling streams.
    """

    lr_max: float = 1e-2
    lr_min: float = 1e-4
    batch_size: int = 256
    iterations: int = 4000
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    ema_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.lr_min <= self.lr_max:
            raise ConfigError("require 0 <= lr_min <= lr_max")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        b1, b2 = self.adam_betas
        if not (0.0 <= b1 < 1.0 and 0.0 <= b2 < 1.0):
            raise ConfigError("adam betas must lie in [0, 1)")
        if self.adam_eps <= 0.0:
            raise ConfigError("adam_eps must be positive")
        if not 0.0 <= self.ema_fraction <= 1.0:
            raise ConfigError("ema_fraction must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "lr_max": self.lr_max,
            "lr_min": self.lr_min,
            "batch_size": self.batch_size,
            "iterations": self.iterations,
            "adam_betas": list(self.adam_betas),
            "adam_eps": self.adam_eps,
            "ema_fraction": self.ema_fraction,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        if "adam_betas" in data:
            data["adam_betas"] = tuple(data["adam_betas"])
        return cls(**data)


def cosine_lr(step: int, total: int, lr_max: float, lr_min: float) -> float:
    """Cosine ramp from ``lr_max`` at step 0 to ``lr_min`` at ``total``."""
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * step / total))


class Adam:
    """Elementwise Adam over a dict of named parameter arrays."""

    def __init__(self, betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.betas = (float(betas[0]), float(betas[1]))
        self.eps = float(eps)
        self.count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> None:
        """Update ``params`` in place from ``grads``."""
        b1, b2 = self.betas
        self.count += 1
        c1 = 1.0 - b1 ** self.count
        c2 = 1.0 - b2 ** self.count
        for name in params:
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(params[name])
                self.v[name] = np.zeros_like(params[name])
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self) -> dict:
        return {
            "count": self.count,
            "m": {k: v.tolist() for k, v in self.m.items()},
            "v": {k: v.tolist() for k, v in self.v.items()},
        }

    def load_state_dict(self, state: dict) -> None:
        self.count = int(state["count"])
        self.m = {k: np.asarray(v, dtype=float) for k, v in state["m"].items()}
        self.v = {k: np.asarray(v, dtype=float) for k, v in state["v"].items()}


@dataclass
class LoopState:
    """Resumable snapshot of an optimization loop."""

    iteration: int
    params: dict[str, np.ndarray]
    averaged: dict[str, np.ndarray]
    adam: dict
    loss_ema: float

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "params": {k: v.tolist() for k, v in self.params.items()},
            "averaged": {k: v.tolist() for k, v in self.averaged.items()},
            "adam": self.adam,
            "loss_ema": self.loss_ema,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LoopState":
        return cls(
            iteration=int(data["iteration"]),
            params={k: np.asarray(v, dtype=float) for k, v in data["params"].items()},
            averaged={k: np.asarray(v, dtype=float) for k, v in data["averaged"].items()},
            adam=data["adam"],
            loss_ema=float(data["loss_ema"]),
        )


@dataclass
class LoopResult:
    """Outcome of :func:`adam_loop`."""

    params: dict[str, np.ndarray]
    averaged: dict[str, np.ndarray]
    trace: list[tuple[int, float, float, float]] = field(default_factory=list)
    state: LoopState | None = None


def _snapshot(iteration, params, averaged, adam, loss_ema) -> LoopState:
    return LoopState(
        iteration=iteration,
        params={k: v.copy() for k, v in params.items()},
        averaged={k: v.copy() for k, v in averaged.items()},
        adam=adam.state_dict(),
        loss_ema=loss_ema,
    )


def adam_loop(
    params: dict[str, np.ndarray],
    step_fn: Callable[[dict[str, np.ndarray], int], tuple[float, dict[str, np.ndarray]]],
    cfg: TrainConfig,
    start_state: LoopState | None = None,
) -> LoopResult:
    """Run Adam with a cosine schedule over ``cfg.iterations`` steps.

    ``step_fn(params, iteration)`` returns the batch loss and a gradient
    array per parameter name.  A non-finite loss or gradient aborts the
    run with the last finite snapshot attached to the raised error.
    The trace records ``(iteration, lr, batch_loss, smoothed_loss)``.
    """
    if not params:
        raise ConfigError("no parameters to optimize")
    params = {k: np.array(v, dtype=float) for k, v in params.items()}
    adam = Adam(cfg.adam_betas, cfg.adam_eps)
    if start_state is not None:
        params = {k: v.copy() for k, v in start_state.params.items()}
        averaged = {k: v.copy() for k, v in start_state.averaged.items()}
        adam.load_state_dict(start_state.adam)
        loss_ema = start_state.loss_ema
        start = start_state.iteration
    else:
        averaged = {k: v.copy() for k, v in params.items()}
        loss_ema = math.nan
        start = 0

    rho = cfg.ema_fraction
    trace: list[tuple[int, float, float, float]] = []
    for it in range(start, cfg.iterations):
        good = _snapshot(it, params, averaged, adam, loss_ema)
        loss, grads = step_fn(params, it)
        loss = float(loss)
        bad = not math.isfinite(loss)
        if not bad:
            for name in params:
                if not np.all(np.isfinite(grads[name])):
                    bad = True
                    break
        if bad:
            raise TrainingError(
                f"non-finite loss or gradient at iteration {it}", checkpoint=good
            )
        lr = cosine_lr(it, cfg.iterations, cfg.lr_max, cfg.lr_min)
        adam.step(params, grads, lr)
        for name in params:
            averaged[name] = (1.0 - rho) * averaged[name] + rho * params[name]
        loss_ema = loss if math.isnan(loss_ema) else (1.0 - rho) * loss_ema + rho * loss
        trace.append((it, lr, loss, loss_ema))

    final = _snapshot(cfg.iterations, params, averaged, adam, loss_ema)
    return LoopResult(params=params, averaged=averaged, trace=trace, state=final)


def mse_pair(pred, target0, target1):
    """Mean squared error over the two coordinates of a point.

    Works on floats, tape variables, or per-lane arrays; the result has
    whatever type the inputs induce.
    """
    d0 = pred[0] - target0
    d1 = pred[1] - target1
    return (d0 * d0 + d1 * d1) * 0.5


def mean_loss(tp: "tape.Tape", lane_loss: "tape.Var") -> tuple[float, float]:
    """Scalar batch loss and the backward seed for its mean.

    ``lane_loss`` holds one loss per lane (or a plain scalar).  Returns
    ``(batch_loss, seed)`` where seeding backward with ``seed`` makes
    shared-parameter gradients equal the gradient of the mean.
    """
    value = np.asarray(tape.value(lane_loss), dtype=float)
    if value.ndim == 0:
        return float(value), 1.0
    return float(value.mean()), 1.0 / value.size
