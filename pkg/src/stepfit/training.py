"""Teacher generation, head-network training, and strategy evaluation.

A teacher record stores the derived seed that regenerates its start
point, an optional label, and the endpoint a high-step reference solve
reached from that start.  Training fits the head network so that solves
over its decoded discretizations land on those endpoints; evaluation
runs any discretization strategy over a sample set and reports
per-sample endpoint losses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import discretize, mixture, network, optim, rngs, solvers, tape
from .discretize import Bounds, HeadSwitches
from .errors import ConfigError, ContractError
from .network import PhiNetwork
from .solvers import GeneralDiscretization, SolverSpec

PRIOR_MODES = ("gaussian", "faithful")


@dataclass(frozen=True)
class TeacherRecord:
    """One training pair: derived seed, optional label, solved endpoint."""

    seed: int
    condition: int | None
    endpoint: tuple[float, float]

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "condition": self.condition,
            "endpoint": [float(self.endpoint[0]), float(self.endpoint[1])],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TeacherRecord":
        cond = data["condition"]
        return cls(
            seed=int(data["seed"]),
            condition=None if cond is None else int(cond),
            endpoint=(float(data["endpoint"][0]), float(data["endpoint"][1])),
        )


def start_point(record: TeacherRecord, schedule, prior_mode: str = "gaussian",
                gmm=None) -> np.ndarray:
    """Regenerate the start point a record was solved from."""
    return mixture.sample_prior(schedule, 1, record.seed, prior_mode, gmm)[0]


def generate_teacher(
    oracle,
    schedule,
    count: int,
    nfe: int,
    seed: int,
    prior_mode: str = "gaussian",
    conditions=None,
) -> list[TeacherRecord]:
    """Solve ``count`` prior draws with the high-step reference.

    Start point i comes from the stream derived with tag ``teacher:i``,
    so any record can be regenerated from its stored seed alone.
    """
    if count < 1:
        raise ConfigError(f"need count >= 1, got {count}")
    if prior_mode not in PRIOR_MODES:
        raise ConfigError(f"unknown prior mode {prior_mode!r}; expected {PRIOR_MODES}")
    if conditions is not None and len(conditions) != count:
        raise ContractError("condition count mismatch")
    gmm = oracle if isinstance(oracle, mixture.GaussianMixtureModel) else None
    seeds = [rngs.derive_seed(seed, f"teacher:{i}") for i in range(count)]
    starts = np.stack(
        [mixture.sample_prior(schedule, 1, s, prior_mode, gmm)[0] for s in seeds]
    )
    e0, e1 = solvers.reference_solve(oracle, schedule, (starts[:, 0], starts[:, 1]), nfe)
    records = []
    for i in range(count):
        cond = None if conditions is None else conditions[i]
        records.append(
            TeacherRecord(seed=seeds[i], condition=cond, endpoint=(float(e0[i]), float(e1[i])))
        )
    return records


def records_to_arrays(
    records: list[TeacherRecord], schedule, prior_mode: str = "gaussian", gmm=None
) -> tuple[np.ndarray, np.ndarray, list]:
    """Start points, endpoints, and labels for a record list."""
    if not records:
        raise ContractError("empty record list")
    starts = np.stack([start_point(r, schedule, prior_mode, gmm) for r in records])
    targets = np.array([r.endpoint for r in records], dtype=float)
    conditions = [r.condition for r in records]
    return starts, targets, conditions


@dataclass
class TrainResult:
    """Outcome of a network training run."""

    net: PhiNetwork  # final weights
    net_averaged: PhiNetwork  # running-average weights, used for evaluation
    trace: list
    state: optim.LoopState


def train_instance(
    spec: SolverSpec,
    oracle,
    schedule,
    teacher,
    net: PhiNetwork,
    cfg: optim.TrainConfig,
    *,
    bounds: Bounds | None = None,
    switches: HeadSwitches | None = None,
    conditions=None,
    start_state: optim.LoopState | None = None,
) -> TrainResult:
    """Train the head network against teacher endpoints.

    ``teacher`` is a ``(starts, targets)`` pair of (n, 2) arrays.  Each
    iteration draws a batch from the ``batch:<iteration>`` stream,
    records the solve through the network's decoded heads, and steps
    Adam on the mean endpoint loss.  Resume from ``start_state`` replays
    the identical iteration sequence.
    """
    starts, targets = discretize._teacher_arrays(teacher)
    bounds = bounds if bounds is not None else Bounds()
    switches = switches if switches is not None else HeadSwitches()
    if not switches.any():
        raise ConfigError("at least one head group must be enabled")
    heads_on = (switches.tau, switches.dtau, switches.gamma)
    n = len(starts)
    if conditions is not None and len(conditions) != n:
        raise ContractError("condition count mismatch")
    emb = (
        network.embed_conditions(conditions, n, net.label_dim)
        if net.label_dim
        else None
    )
    draw = min(cfg.batch_size, n)
    n_steps = net.n_steps

    def step(cur, it):
        rng = rngs.rng_for(cfg.seed, f"batch:{it}")
        idx = rng.integers(0, n, size=draw)
        tp = tape.Tape()
        leaves = network.leaf_params(tp, cur)
        raw = network.forward_taped(
            net,
            leaves,
            (starts[idx, 0], starts[idx, 1]),
            None if emb is None else emb[idx],
            heads_on=heads_on,
        )
        xi = discretize.decode_heads(raw, bounds, schedule, n_steps)
        end = solvers.solve(spec, oracle, schedule, (starts[idx, 0], starts[idx, 1]), xi)
        lane = optim.mse_pair(end, targets[idx, 0], targets[idx, 1])
        loss, seed = optim.mean_loss(tp, lane)
        grad = tp.backward(lane, seed=seed)
        return loss, network.grads_to_arrays(grad, leaves)

    res = optim.adam_loop(net.params(), step, cfg, start_state=start_state)
    return TrainResult(
        net=net.with_params(res.params),
        net_averaged=net.with_params(res.averaged),
        trace=res.trace,
        state=res.state,
    )


@dataclass
class EvalResult:
    """Endpoints and per-sample losses of one strategy over one set."""

    endpoints: np.ndarray  # (n, 2)
    losses: np.ndarray  # (n,)

    @property
    def mean_loss(self) -> float:
        return float(self.losses.mean())


def evaluate_strategy(
    spec: SolverSpec,
    oracle,
    schedule,
    starts: np.ndarray,
    targets: np.ndarray,
    strategy,
    *,
    bounds: Bounds | None = None,
    conditions=None,
) -> EvalResult:
    """Solve every start under a strategy and score against targets.

    ``strategy`` picks the discretization source: a shared
    ``GeneralDiscretization`` (heuristic or global fit), a ``PhiNetwork``
    (per-sample heads from its forward pass), or an
    ``OverfitFit`` (per-sample raw heads).
    """
    starts = np.asarray(starts, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if starts.ndim != 2 or starts.shape[1] != 2 or starts.shape != targets.shape:
        raise ContractError("starts and targets must share shape (n, 2)")
    lanes = (starts[:, 0], starts[:, 1])
    if isinstance(strategy, GeneralDiscretization):
        xi = strategy
    elif isinstance(strategy, PhiNetwork):
        raw = network.forward(strategy, starts, conditions)
        xi = discretize.decode_heads(
            raw, bounds if bounds is not None else Bounds(), schedule, strategy.n_steps
        )
    elif isinstance(strategy, discretize.OverfitFit):
        if len(strategy.initial_losses) != len(starts):
            raise ContractError("overfit strategy covers a different sample count")
        xi = discretize.decode_params(
            strategy.raw, strategy.bounds, schedule, strategy.n_steps
        )
    else:
        raise ContractError(f"unknown strategy type {type(strategy).__name__}")
    e0, e1 = solvers.solve(spec, oracle, schedule, lanes, xi)
    e0 = np.broadcast_to(np.asarray(e0, dtype=float), (len(starts),))
    e1 = np.broadcast_to(np.asarray(e1, dtype=float), (len(starts),))
    endpoints = np.stack([e0, e1], axis=1)
    losses = np.asarray(
        optim.mse_pair((e0, e1), targets[:, 0], targets[:, 1]), dtype=float
    )
    return EvalResult(endpoints=endpoints, losses=losses)
