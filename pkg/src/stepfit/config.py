"""Experiment configuration: one structured file drives every command.

Every field has a default, so an empty config file (or none) is valid.
Unknown keys are rejected rather than ignored, which catches typos
before they silently change an experiment.  The effective config is the
deep merge of the defaults with the user file; serializing and reparsing
it is an exact round trip.
"""

from __future__ import annotations

import copy
import hashlib
import math

import yaml

from . import metrics, mixture, optim, schedules, solvers, textio
from .discretize import Bounds, HeadSwitches
from .errors import ConfigError

STRATEGIES = ("uniform", "logsnr", "polynomial", "global", "instance", "overfit")
HEURISTIC_STRATEGIES = ("uniform", "logsnr", "polynomial")
LEARNED_STRATEGIES = ("global", "instance", "overfit")

_DEFAULTS = {
    "seed": 0,
    "schedule": {"kind": "ot", "T": None, "t0": None},
    "tree": {
        "depth": 5,
        "root_length": 1.2,
        "length_decay": 0.68,
        "branch_angle_deg": 25.0,
        "components_per_segment": 6,
        "segment_std": 0.02,
        "seed": 0,
    },
    "solver": {
        "family": "ipndm",
        "max_order": 4,
        "teacher_nfe": 100,
        "student_steps": [3, 4, 5, 6],
    },
    "teacher": {"count": 1024, "prior_mode": "gaussian"},
    "strategy": {
        "strategies": ["uniform", "global", "instance"],
        "heads": {"tau": True, "dtau": True, "gamma": True},
        "bounds": {"time_shift": 0.05, "output_scale": 0.05},
        "hidden": 64,
        "overfit_chunk": 256,
        "polynomial_rho": 7.0,
    },
    "train": {
        "lr_max": 0.01,
        "lr_min": 0.0001,
        "batch_size": 256,
        "iterations": 4000,
        "adam_betas": [0.9, 0.999],
        "adam_eps": 1.0e-8,
        "ema_fraction": 0.2,
        "overrides": {},
    },
    "metrics": {
        "bins": 100,
        "pad_fraction": 0.1,
        "smoothing": 1.0e-6,
        "n_projections": 128,
    },
    "paths": {
        "dataset": "artifacts/teacher.jsonl",
        "checkpoints": "artifacts/checkpoints",
        "reports": "artifacts/reports",
    },
}

# train.overrides holds per-strategy partial train blocks, so its keys
# are strategy names rather than fixed fields.
_OPEN_BLOCKS = (("train", "overrides"),)


def _merge(defaults, user, path):
    if not isinstance(user, dict):
        raise ConfigError(f"config section {'.'.join(path) or '<root>'} must be a mapping")
    out = copy.deepcopy(defaults)
    for key, val in user.items():
        if key not in defaults:
            raise ConfigError(f"unknown config key {'.'.join((*path, str(key)))!r}")
        if isinstance(defaults[key], dict) and (*path, key) not in _OPEN_BLOCKS:
            out[key] = _merge(defaults[key], val, (*path, key))
        else:
            out[key] = copy.deepcopy(val)
    return out


class ExperimentConfig:
    """The effective configuration; construct via from_dict/from_yaml."""

    def __init__(self, data: dict):
        self.data = data

    @classmethod
    def from_dict(cls, user: dict | None) -> "ExperimentConfig":
        merged = _merge(_DEFAULTS, user or {}, ())
        cfg = cls(merged)
        cfg.validate()
        return cfg

    @classmethod
    def from_yaml(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            loaded = yaml.safe_load(fh)
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {path} must hold a mapping")
        return cls.from_dict(loaded)

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.data, sort_keys=True, default_flow_style=False)

    def validate(self) -> None:
        """Instantiate every typed block so all invariants run."""
        self.schedule()
        self.tree_config()
        self.solver_spec()
        self.bounds()
        self.switches()
        self.grid()
        steps = self.data["solver"]["student_steps"]
        if not steps or any(int(n) < 1 for n in steps):
            raise ConfigError("solver.student_steps must be a non-empty list of n >= 1")
        for name in self.data["strategy"]["strategies"]:
            if name not in STRATEGIES:
                raise ConfigError(f"unknown strategy {name!r}; expected one of {STRATEGIES}")
        if int(self.data["teacher"]["count"]) < 1:
            raise ConfigError("teacher.count must be >= 1")
        if self.data["teacher"]["prior_mode"] not in ("gaussian", "faithful"):
            raise ConfigError("teacher.prior_mode must be gaussian or faithful")
        if int(self.data["solver"]["teacher_nfe"]) < 1:
            raise ConfigError("solver.teacher_nfe must be >= 1")
        if int(self.data["strategy"]["hidden"]) < 1:
            raise ConfigError("strategy.hidden must be >= 1")
        if int(self.data["strategy"]["overfit_chunk"]) < 1:
            raise ConfigError("strategy.overfit_chunk must be >= 1")
        for name, block in self.data["train"]["overrides"].items():
            if name not in LEARNED_STRATEGIES:
                raise ConfigError(f"train.overrides key {name!r} is not a learned strategy")
            if not isinstance(block, dict):
                raise ConfigError(f"train.overrides.{name} must be a mapping")
            self.train_for(name, 1)  # instantiate to validate fields

    # -- typed accessors -------------------------------------------------

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    def schedule(self) -> schedules.NoiseSchedule:
        blk = self.data["schedule"]
        return schedules.make_schedule(blk["kind"], T=blk["T"], t0=blk["t0"])

    def tree_config(self) -> mixture.TreeConfig:
        blk = self.data["tree"]
        return mixture.TreeConfig(
            depth=int(blk["depth"]),
            root_length=float(blk["root_length"]),
            length_decay=float(blk["length_decay"]),
            branch_angle=math.radians(float(blk["branch_angle_deg"])),
            components_per_segment=int(blk["components_per_segment"]),
            segment_std=float(blk["segment_std"]),
            seed=int(blk["seed"]),
        )

    def solver_spec(self) -> solvers.SolverSpec:
        blk = self.data["solver"]
        return solvers.SolverSpec(family=blk["family"], max_order=int(blk["max_order"]))

    def bounds(self) -> Bounds:
        blk = self.data["strategy"]["bounds"]
        return Bounds(
            time_shift=float(blk["time_shift"]), output_scale=float(blk["output_scale"])
        )

    def switches(self) -> HeadSwitches:
        blk = self.data["strategy"]["heads"]
        return HeadSwitches(tau=bool(blk["tau"]), dtau=bool(blk["dtau"]), gamma=bool(blk["gamma"]))

    def grid(self) -> metrics.GridConfig:
        blk = self.data["metrics"]
        return metrics.GridConfig(
            bins=int(blk["bins"]),
            pad_fraction=float(blk["pad_fraction"]),
            smoothing=float(blk["smoothing"]),
        )

    def train_for(self, strategy: str, nfe: int) -> optim.TrainConfig:
        """The train config for one strategy/step-count cell.

        Per-strategy overrides patch the base block; the seed is derived
        from the global seed and the cell identity so different cells
        draw independent batch streams.
        """
        from . import rngs  # local to keep module import order flat

        blk = dict(self.data["train"])
        overrides = blk.pop("overrides")
        patch = overrides.get(strategy, {})
        unknown = set(patch) - set(blk)
        if unknown:
            raise ConfigError(f"train.overrides.{strategy} has unknown keys {sorted(unknown)}")
        blk.update(patch)
        return optim.TrainConfig(
            lr_max=float(blk["lr_max"]),
            lr_min=float(blk["lr_min"]),
            batch_size=int(blk["batch_size"]),
            iterations=int(blk["iterations"]),
            adam_betas=(float(blk["adam_betas"][0]), float(blk["adam_betas"][1])),
            adam_eps=float(blk["adam_eps"]),
            ema_fraction=float(blk["ema_fraction"]),
            seed=rngs.derive_seed(self.seed, f"train:{strategy}:{nfe}"),
        )

    def oracle_hash(self) -> str:
        """Fingerprint of everything that determines the teacher data."""
        payload = {
            "schedule": self.data["schedule"],
            "tree": self.data["tree"],
            "teacher": self.data["teacher"],
            "teacher_nfe": self.data["solver"]["teacher_nfe"],
            "seed": self.seed,
        }
        return hashlib.sha256(textio.canonical_json(payload).encode()).hexdigest()[:16]
