"""Few-step sampling of diffusion-style probability-flow ODEs in 2-D,
with learnable solver discretizations.

The package builds a Gaussian-mixture ground truth whose noise
prediction is available in closed form, integrates the probability-flow
ODE with first-order and multistep solvers over arbitrary step grids,
and fits those grids — shared, per-sample, or emitted by a small
network from the start point — against high-step teacher endpoints by
differentiating straight through the solver on a hand-rolled reverse-
mode tape.
"""

from .config import ExperimentConfig
from .discretize import (
    Bounds,
    HeadSwitches,
    RawHeads,
    decode_heads,
    heuristic,
    optimize_global,
    optimize_overfit,
    optimize_per_instance,
)
from .errors import (
    ConfigError,
    ContractError,
    DomainError,
    NumericalError,
    TrainingError,
)
from .metrics import (
    GridConfig,
    MetricsReport,
    build_report,
    endpoint_mse,
    export_scatter,
    kl_divergence,
    wasserstein,
)
from .mixture import (
    GaussianMixtureModel,
    TreeConfig,
    build_tree_mixture,
    data_prediction,
    eps_prediction,
    log_density,
    sample_data,
    sample_prior,
    score,
    velocity,
)
from .network import PhiNetwork, embed_condition, forward, init
from .optim import TrainConfig
from .schedules import (
    NoiseSchedule,
    alpha_sigma,
    eps_to_velocity,
    log_snr,
    make_schedule,
    ode_coefficients,
    ot_to_ve,
    time_from_log_snr,
    ve_to_ot,
)
from .solvers import (
    CountingOracle,
    GeneralDiscretization,
    SolverSpec,
    reference_solve,
    solve,
    transformed_eval,
)
from .tape import Gradients, Tape, Var
from .training import (
    TeacherRecord,
    TrainResult,
    evaluate_strategy,
    generate_teacher,
    train_instance,
)

__version__ = "0.1.0"

__all__ = [
    "Bounds",
    "ConfigError",
    "ContractError",
    "CountingOracle",
    "DomainError",
    "ExperimentConfig",
    "GaussianMixtureModel",
    "GeneralDiscretization",
    "Gradients",
    "GridConfig",
    "HeadSwitches",
    "MetricsReport",
    "NoiseSchedule",
    "NumericalError",
    "PhiNetwork",
    "RawHeads",
    "SolverSpec",
    "Tape",
    "TeacherRecord",
    "TrainConfig",
    "TrainResult",
    "TrainingError",
    "TreeConfig",
    "Var",
    "alpha_sigma",
    "build_report",
    "build_tree_mixture",
    "data_prediction",
    "decode_heads",
    "embed_condition",
    "endpoint_mse",
    "eps_prediction",
    "eps_to_velocity",
    "evaluate_strategy",
    "export_scatter",
    "forward",
    "generate_teacher",
    "heuristic",
    "init",
    "kl_divergence",
    "log_density",
    "log_snr",
    "make_schedule",
    "ode_coefficients",
    "optimize_global",
    "optimize_overfit",
    "optimize_per_instance",
    "ot_to_ve",
    "reference_solve",
    "sample_data",
    "sample_prior",
    "score",
    "solve",
    "time_from_log_snr",
    "train_instance",
    "transformed_eval",
    "ve_to_ot",
    "velocity",
    "wasserstein",
]
