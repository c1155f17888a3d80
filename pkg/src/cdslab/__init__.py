"""Desk-scale laboratory for score-distillation generation.

Exact Gaussian-mixture denoisers stand in for large diffusion models so
that stochastic (ancestral) and deterministic (probability-flow)
sampling, the score-distillation baseline, and consistency distillation
with fixed noise can be run, compared, and measured end to end in
seconds, with fully seeded reproducibility.
"""

from cdslab.distill import (
    DistillRunConfig,
    FixedNoise,
    RunLog,
    cds_step,
    lambda_of,
    run_distill,
    sds_grad,
    view_denoiser,
)
from cdslab.errors import (
    ConditionError,
    ConfigError,
    DivergenceError,
    DomainError,
    InputError,
    NumericalError,
    OrderError,
    ScanError,
    ShapeError,
    SingularityError,
    StateError,
    TrainingError,
)
from cdslab.harness import (
    AblationResult,
    ScanResult,
    ablation_suite,
    default_recovery_config,
    guidance_variance_compare,
    sds_sde_equivalence,
    theorem1_scan,
)
from cdslab.mixture import (
    Component,
    DenoiserQuery,
    GaussianMixture,
    OracleDenoiser,
    as_denoiser,
    denoise,
    log_density,
    perturb,
    sample_data,
    score,
    single_gaussian,
)
from cdslab.optim import init_optimizer, optimizer_update
from cdslab.rng import array_hash, named_stream
from cdslab.samplers import (
    Trajectory,
    ancestral_batch,
    ancestral_endpoints,
    ancestral_sde_sample,
    euler_ode_step,
    gaussian_ode_oracle,
    ode_batch,
    ode_endpoints,
    ode_sample,
)
from cdslab.scene import (
    SceneParams,
    SceneTask,
    TaskOracle,
    ViewOperator,
    default_recovery_task,
    draw_separated_modes,
    make_task,
    mode_distance,
    render,
    render_vjp,
)
from cdslab.schedule import (
    NoiseSchedule,
    ScheduleParams,
    cfg_weight,
    sample_t1,
    sigma,
    sigma_dot,
    t2_of_iter,
    uniform_time_grid,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # schedule
    "NoiseSchedule", "ScheduleParams", "sigma", "sigma_dot", "t2_of_iter",
    "sample_t1", "cfg_weight", "uniform_time_grid",
    # mixture
    "Component", "GaussianMixture", "DenoiserQuery", "OracleDenoiser",
    "perturb", "denoise", "score", "log_density", "sample_data",
    "as_denoiser", "single_gaussian",
    # samplers
    "Trajectory", "euler_ode_step", "ode_sample", "ancestral_sde_sample",
    "ode_batch", "ode_endpoints", "ancestral_batch", "ancestral_endpoints",
    "gaussian_ode_oracle",
    # scene
    "SceneParams", "ViewOperator", "SceneTask", "TaskOracle", "render",
    "render_vjp", "make_task", "mode_distance", "draw_separated_modes",
    "default_recovery_task",
    # distill
    "DistillRunConfig", "FixedNoise", "RunLog", "lambda_of", "view_denoiser",
    "sds_grad", "cds_step", "run_distill",
    # optim
    "init_optimizer", "optimizer_update",
    # harness
    "ScanResult", "AblationResult", "sds_sde_equivalence", "theorem1_scan",
    "guidance_variance_compare", "ablation_suite", "default_recovery_config",
    # rng
    "named_stream", "array_hash",
    # errors
    "ConfigError", "DomainError", "ShapeError", "OrderError", "ConditionError",
    "InputError", "NumericalError", "SingularityError", "StateError",
    "DivergenceError", "TrainingError", "ScanError",
]
