"""Energy-based self-adjusting learning-rate optimization.

The library implements the elementwise relaxed auxiliary-variable method
(VAV), its unrelaxed scalar counterpart (SAV), and a plain SGD baseline,
together with invariant checkers for the energy-dissipation theory and a
deterministic benchmark harness.
"""

from .core import (
    Batch,
    ConfigError,
    DivergenceError,
    InternalConsistencyError,
    Objective,
    RngStream,
    SchemaError,
    Vector,
    as_param_vector,
    evaluate,
    finite_difference_gradient,
    sample_batch,
)
from .diagnostics import (
    InvariantReport,
    LowerBoundTrace,
    OmegaSolve,
    audit_omega,
    check_dissipation,
    omega_solves_from_records,
    track_lower_bound,
)
from .harness import (
    ExperimentConfig,
    RunSummary,
    compare_runs,
    quadratic_benchmark_config,
    run_experiment,
    selftest,
    sine_mlp_config,
    sweep,
    table1_configs,
)
from .optim import (
    OmegaInputs,
    SavState,
    StepDetail,
    StepRecord,
    VavState,
    init_state,
    relax_r,
    sav_step,
    sav_tilde_r,
    scheduler_effective_lr,
    sgd_step,
    solve_omega,
    vav_position_update,
    vav_step,
    vav_tilde_r,
)
from .problems import (
    MlpModel,
    QuadraticProblem,
    RegressionProblem,
    RosenbrockProblem,
    load_dataset_csv,
    make_sine_regression,
    save_dataset_csv,
)

__version__ = "0.1.0"

__all__ = [
    "Batch",
    "ConfigError",
    "DivergenceError",
    "ExperimentConfig",
    "InternalConsistencyError",
    "InvariantReport",
    "LowerBoundTrace",
    "MlpModel",
    "Objective",
    "OmegaInputs",
    "OmegaSolve",
    "QuadraticProblem",
    "RegressionProblem",
    "RngStream",
    "RosenbrockProblem",
    "RunSummary",
    "SavState",
    "SchemaError",
    "StepDetail",
    "StepRecord",
    "VavState",
    "Vector",
    "as_param_vector",
    "audit_omega",
    "check_dissipation",
    "compare_runs",
    "evaluate",
    "finite_difference_gradient",
    "init_state",
    "load_dataset_csv",
    "make_sine_regression",
    "omega_solves_from_records",
    "quadratic_benchmark_config",
    "relax_r",
    "run_experiment",
    "sample_batch",
    "sav_step",
    "sav_tilde_r",
    "save_dataset_csv",
    "scheduler_effective_lr",
    "selftest",
    "sgd_step",
    "sine_mlp_config",
    "solve_omega",
    "sweep",
    "table1_configs",
    "track_lower_bound",
    "vav_position_update",
    "vav_step",
    "vav_tilde_r",
]
