"""A small head network: start point (plus optional label) to raw heads.

One hidden layer with rectified units; the output layer emits 3N raw
values that decode into an N-step discretization.  The output layer
initializes to zero so an untrained network decodes to the uniform grid
with identity transforms.

Two forward paths share the same weights: a vectorized one for
evaluation over sample batches, and a per-neuron one recorded on a tape
for training.  Within each path results are deterministic; across the
two paths values agree to rounding because the reduction orders differ.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import rngs, tape
from .discretize import RawHeads
from .errors import ConfigError, ContractError


@dataclass(frozen=True)
class PhiNetwork:
    """Weights and static shape info for the head network."""

    w1: np.ndarray  # (hidden, 2 + label_dim)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (3 * n_steps, hidden)
    b2: np.ndarray  # (3 * n_steps,)
    n_steps: int
    label_dim: int = 0
    input_scale: float = 1.0

    def __post_init__(self):
        for name in ("w1", "b1", "w2", "b2"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        hidden = self.w1.shape[0]
        if self.w1.shape != (hidden, self.in_dim):
            raise ContractError(f"w1 must be (hidden, {self.in_dim}), got {self.w1.shape}")
        if self.b1.shape != (hidden,):
            raise ContractError("b1 shape mismatch")
        if self.w2.shape != (3 * self.n_steps, hidden):
            raise ContractError("w2 shape mismatch")
        if self.b2.shape != (3 * self.n_steps,):
            raise ContractError("b2 shape mismatch")

    @property
    def in_dim(self) -> int:
        return 2 + self.label_dim

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1.copy(), "b1": self.b1.copy(),
                "w2": self.w2.copy(), "b2": self.b2.copy()}

    def with_params(self, params: dict[str, np.ndarray]) -> "PhiNetwork":
        return replace(self, **{k: np.array(v, dtype=float) for k, v in params.items()})

    def to_dict(self) -> dict:
        return {
            "n_steps": self.n_steps,
            "label_dim": self.label_dim,
            "input_scale": self.input_scale,
            "w1": self.w1.tolist(),
            "b1": self.b1.tolist(),
            "w2": self.w2.tolist(),
            "b2": self.b2.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PhiNetwork":
        return cls(
            w1=np.asarray(data["w1"], dtype=float),
            b1=np.asarray(data["b1"], dtype=float),
            w2=np.asarray(data["w2"], dtype=float),
            b2=np.asarray(data["b2"], dtype=float),
            n_steps=int(data["n_steps"]),
            label_dim=int(data["label_dim"]),
            input_scale=float(data["input_scale"]),
        )


def init(
    seed: int,
    n_steps: int,
    hidden: int = 64,
    label_dim: int = 0,
    zero_last: bool = True,
    input_scale: float = 1.0,
) -> PhiNetwork:
    """Fresh weights on the derived ``phi-init`` stream.

    The hidden layer draws Glorot-uniform over (-L, L) with
    L = sqrt(6/(fan_in + fan_out)).  With ``zero_last`` the output layer
    starts at zero, so the initial decode is exactly the uniform grid
    with identity transforms; otherwise it draws from N(0, 1/hidden).
    """
    if n_steps < 1 or hidden < 1 or label_dim < 0:
        raise ConfigError("need n_steps >= 1, hidden >= 1, label_dim >= 0")
    rng = rngs.rng_for(seed, "phi-init")
    in_dim = 2 + label_dim
    limit = math.sqrt(6.0 / (in_dim + hidden))
    w1 = rng.uniform(-limit, limit, size=(hidden, in_dim))
    b1 = np.zeros(hidden)
    if zero_last:
        w2 = np.zeros((3 * n_steps, hidden))
    else:
        w2 = rng.normal(0.0, math.sqrt(1.0 / hidden), size=(3 * n_steps, hidden))
    b2 = np.zeros(3 * n_steps)
    return PhiNetwork(
        w1=w1, b1=b1, w2=w2, b2=b2,
        n_steps=n_steps, label_dim=label_dim, input_scale=input_scale,
    )


def embed_condition(condition, label_dim: int) -> np.ndarray:
    """One-hot embedding of an integer label, scaled by 1/sqrt(label_dim)
    so the embedded norm stays constant across label widths; zeros when
    unconditioned."""
    if label_dim == 0:
        if condition is not None:
            raise ContractError("got a condition but label_dim is 0")
        return np.zeros(0)
    out = np.zeros(label_dim)
    if condition is None:
        return out
    idx = int(condition)
    if not 0 <= idx < label_dim:
        raise ContractError(f"condition {idx} outside [0, {label_dim})")
    out[idx] = 1.0 / math.sqrt(label_dim)
    return out


def embed_conditions(conditions, count: int, label_dim: int) -> np.ndarray:
    """Stacked embeddings, one row per sample."""
    if conditions is None:
        conditions = [None] * count
    if len(conditions) != count:
        raise ContractError("condition count mismatch")
    return np.stack([embed_condition(c, label_dim) for c in conditions])


def forward(net: PhiNetwork, x: np.ndarray, conditions=None) -> RawHeads:
    """Vectorized forward over a batch of start points.

    ``x`` is (B, 2); the returned raw heads hold (B,) arrays per entry.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != 2:
        raise ContractError(f"x must be (B, 2), got {x.shape}")
    emb = embed_conditions(conditions, len(x), net.label_dim)
    feats = np.concatenate([x * net.input_scale, emb], axis=1)
    hid = np.maximum(feats @ net.w1.T + net.b1, 0.0)
    out = hid @ net.w2.T + net.b2
    n = net.n_steps
    return RawHeads(
        o_tau=tuple(out[:, j] for j in range(n)),
        o_dtau=tuple(out[:, n + j] for j in range(n)),
        o_gamma=tuple(out[:, 2 * n + j] for j in range(n)),
    )


def forward_point(net: PhiNetwork, point, condition=None) -> RawHeads:
    """Forward for one start point, returning float head entries."""
    conds = None if condition is None else [condition]
    raw = forward(net, np.asarray(point, dtype=float).reshape(1, 2), conds)
    pick = lambda grp: tuple(float(np.asarray(o)[0]) for o in grp)
    return RawHeads(pick(raw.o_tau), pick(raw.o_dtau), pick(raw.o_gamma))


def leaf_params(tp: tape.Tape, source) -> dict:
    """One tape leaf per weight, shaped like the parameter arrays.

    ``source`` is a network or a parameter dict with the same keys.
    """
    params = source.params() if isinstance(source, PhiNetwork) else source
    return {
        "w1": [[tp.leaf(float(v)) for v in row] for row in params["w1"]],
        "b1": [tp.leaf(float(v)) for v in params["b1"]],
        "w2": [[tp.leaf(float(v)) for v in row] for row in params["w2"]],
        "b2": [tp.leaf(float(v)) for v in params["b2"]],
    }


def forward_taped(net: PhiNetwork, leaves: dict, x_cols, cond_rows=None, heads_on=(True, True, True)) -> RawHeads:
    """Per-neuron forward through tape leaves.

    ``x_cols`` is a coordinate pair (floats or per-lane arrays, treated
    as constants); gradients flow to the weight leaves only.  Disabled
    head groups are emitted as constant zeros so their weights stay out
    of the graph.
    """
    feats = [x_cols[0] * net.input_scale, x_cols[1] * net.input_scale]
    if net.label_dim:
        if cond_rows is None:
            raise ContractError("conditioned network needs condition embeddings")
        emb = np.asarray(cond_rows, dtype=float)
        for k in range(net.label_dim):
            feats.append(float(emb[k]) if emb.ndim == 1 else emb[:, k])
    hidden = []
    for j in range(net.hidden):
        row = leaves["w1"][j]
        terms = [row[k] * feats[k] for k in range(net.in_dim)]
        hidden.append(tape.relu(tape.asum(terms) + leaves["b1"][j]))

    n = net.n_steps

    def head(i):
        row = leaves["w2"][i]
        terms = [row[j] * hidden[j] for j in range(net.hidden)]
        return tape.asum(terms) + leaves["b2"][i]

    groups = []
    for g, on in enumerate(heads_on):
        if on:
            groups.append(tuple(head(g * n + j) for j in range(n)))
        else:
            groups.append((0.0,) * n)
    return RawHeads(*groups)


def grads_to_arrays(grad: tape.Gradients, leaves: dict) -> dict[str, np.ndarray]:
    """Collect per-leaf adjoints back into parameter-shaped arrays."""
    out = {}
    for name, grid in leaves.items():
        if isinstance(grid[0], list):
            out[name] = np.array([[float(grad.wrt(v)) for v in row] for row in grid])
        else:
            out[name] = np.array([float(grad.wrt(v)) for v in grid])
    return out
