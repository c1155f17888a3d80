"""Score-distillation optimization engines.

Two losses drive the scene parameters: the score-distillation baseline
(re-noise the rendering, pull it toward its one-step denoised version)
and consistency distillation (fix one noise draw for the whole run, take
an Euler step of the probability-flow ODE between two annealed times, and
match the two points' denoised targets). Both treat the denoiser outputs
as constants and route gradients only through the renderer.
"""

import time as _time
from dataclasses import dataclass, field

import numpy as np
from numpy.random import Generator

from cdslab.errors import (
    ConfigError,
    DivergenceError,
    OrderError,
    ShapeError,
    SingularityError,
)
from cdslab.optim import init_optimizer, optimizer_update
from cdslab.rng import array_hash, named_stream
from cdslab.scene import SceneTask, mode_distance, render, render_vjp
from cdslab.schedule import (
    NoiseSchedule,
    ScheduleParams,
    cfg_weight,
    sample_t1,
    sigma,
    t2_of_iter,
)

_THETA_NORM_CEILING = 1e9
_LAMBDA_MODES = ("unit", "inv-sigma-sq")
_LOSS_KINDS = ("sds", "cds")
_NOISE_MODES = ("fixed", "resampled")
_T2_MODES = ("annealed", "random")


@dataclass(frozen=True)
class DistillRunConfig:
    """Everything one distillation run depends on besides task and denoiser.

    Attributes:
        schedule: Iteration-time schedule (fractions of the horizon).
        loss: "sds" or "cds".
        lambda_mode: Loss weight "unit" (1) or "inv-sigma-sq" (1/sigma^2).
        lr: Learning rate, > 0.
        optimizer: "adam" or "sgd".
        seed: Global seed; all run randomness derives from it by name.
        poses_per_iter: Views sampled per iteration, >= 1.
        cfg: Optional (w_start, w_end) guidance anneal; requires label.
        label: Optional condition label for the denoiser.
        noise_mode: "fixed" (one noise draw per run) or "resampled"
            (fresh draw each iteration); applies to the cds loss.
        t2_mode: "annealed" (square-root profile) or "random" (uniform
            over [t_min T, t_max T] each iteration).
        init_scale: Initial theta std as a multiple of the task's data
            scale.
        init_theta: Optional explicit initial theta overriding the random
            initialization.
    """

    schedule: ScheduleParams
    loss: str = "cds"
    lambda_mode: str = "unit"
    lr: float = 0.02
    optimizer: str = "adam"
    seed: int = 0
    poses_per_iter: int = 4
    cfg: tuple[float, float] | None = None
    label: int | None = None
    noise_mode: str = "fixed"
    t2_mode: str = "annealed"
    init_scale: float = 0.1
    init_theta: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.loss not in _LOSS_KINDS:
            raise ConfigError(f"loss must be one of {_LOSS_KINDS}, got {self.loss!r}")
        if self.lambda_mode not in _LAMBDA_MODES:
            raise ConfigError(
                f"lambda_mode must be one of {_LAMBDA_MODES}, got {self.lambda_mode!r}"
            )
        if self.noise_mode not in _NOISE_MODES:
            raise ConfigError(
                f"noise_mode must be one of {_NOISE_MODES}, got {self.noise_mode!r}"
            )
        if self.t2_mode not in _T2_MODES:
            raise ConfigError(f"t2_mode must be one of {_T2_MODES}, got {self.t2_mode!r}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.poses_per_iter < 1:
            raise ConfigError(f"poses_per_iter must be >= 1, got {self.poses_per_iter}")
        if self.cfg is not None:
            if len(self.cfg) != 2:
                raise ConfigError(f"cfg must be (w_start, w_end), got {self.cfg}")
            if self.label is None:
                raise ConfigError("cfg guidance requires a condition label")
        if self.init_theta is not None:
            arr = np.asarray(self.init_theta, dtype=np.float64)
            if arr.ndim != 1 or not np.all(np.isfinite(arr)):
                raise ConfigError("init_theta must be a finite 1-d vector")
            object.__setattr__(self, "init_theta", arr)


@dataclass(frozen=True)
class FixedNoise:
    """The run's shared noise draw, identical across iterations and poses."""

    eps_star: np.ndarray

    def __post_init__(self) -> None:
        eps = np.asarray(self.eps_star, dtype=np.float64)
        if eps.ndim != 1:
            raise ShapeError(f"eps_star must be 1-d, got shape {eps.shape}")
        object.__setattr__(self, "eps_star", eps)

    @property
    def hash(self) -> str:
        return array_hash(self.eps_star)


@dataclass(frozen=True)
class RunLog:
    """Per-pose-iteration records plus the final state of one run.

    Attributes:
        records: One dict per (iteration, pose) with keys i, t1, t2,
            pose, loss, grad_norm, mode_distance, eps_hash.
        final_theta: Parameters after the last update.
        final_mode_index: Best-matching scene mode at the end.
        final_distance: Aggregate mode distance at the end.
        wall_time: Seconds spent inside the loop.
        snapshot_theta: Parameters captured after snapshot_iter, if asked.
        snapshot_iter: Iteration index of the snapshot, if asked.
    """

    records: tuple[dict, ...]
    final_theta: np.ndarray
    final_mode_index: int
    final_distance: float
    wall_time: float
    snapshot_theta: np.ndarray | None = None
    snapshot_iter: int | None = None


def lambda_of(mode: str, t: float, sched: NoiseSchedule) -> float:
    """Loss weight at time t: 1 for "unit", 1/sigma(t)^2 for "inv-sigma-sq"."""
    if mode == "unit":
        return 1.0
    if mode == "inv-sigma-sq":
        sig = float(sigma(sched, t))
        if sig == 0.0:
            raise SingularityError("inv-sigma-sq weight is undefined at sigma(t) = 0")
        return 1.0 / sig**2
    raise ConfigError(f"unknown lambda mode {mode!r}")


def _sds_terms(theta, view, denoiser, t, eps, sched, lam_mode, y, cfg_w):
    """Loss, gradient, and denoised target for one baseline pose term."""
    sig = float(sigma(sched, t))
    lam = lambda_of(lam_mode, t, sched)
    x_pi = render(theta, view)
    x_t = x_pi + sig * eps
    target = denoiser(x_t, t, y=y, cfg_w=cfg_w)
    resid = x_pi - target
    loss = 0.5 * lam * float(resid @ resid)
    grad = render_vjp(view, lam * resid)
    return loss, grad, target


def sds_grad(scene, view, denoiser, t: float, rng: Generator,
             sched: NoiseSchedule, lam_mode: str = "unit", y: int | None = None,
             cfg_w: float | None = None) -> np.ndarray:
    """Score-distillation gradient for one view at one time.

    Draws eps ~ N(0, I), forms x_t = render(theta) + sigma(t) eps, and
    returns render_vjp(view, lambda(t) (x_pi - D(x_t, t, y))). The
    denoised target is a constant in the gradient.

    Args:
        scene: SceneParams or raw theta vector.
        view: Pose operator.
        denoiser: Callable (x, t, y=None, cfg_w=None) -> denoised x.
        t: Diffusion time, sigma(t) > 0.
        rng: Stream supplying the noise draw.
        sched: Noise schedule.
        lam_mode: Loss weight mode.
        y: Optional condition label.
        cfg_w: Optional guidance weight.

    Returns:
        Gradient with respect to theta.
    """
    if float(sigma(sched, t)) == 0.0:
        raise SingularityError("sds_grad needs sigma(t) > 0")
    eps = rng.standard_normal(view.d_img)
    _, grad, _ = _sds_terms(scene, view, denoiser, t, eps, sched, lam_mode, y, cfg_w)
    return grad


def cds_step(scene, view, denoiser, eps_star: FixedNoise, t1: float, t2: float,
             sched: NoiseSchedule, lam_mode: str = "unit", y: int | None = None,
             cfg_w: float | None = None) -> tuple[float, np.ndarray, dict]:
    """Consistency-distillation loss and gradient for one view.

    Computes, in order: x_pi = render(theta); x_t1 = x_pi + sigma(t1) e*;
    d = (x_t1 - D(x_t1, t1, y)) / sigma(t1); x_t2 = x_t1 +
    (sigma(t2) - sigma(t1)) d; x0 = x_pi + [sigma(t1) (e* - d)] held
    constant; loss = lambda(t2) ||x0 - [D(x_t2, t2, y)] held constant||^2.
    Because both bracketed terms are constants, the gradient is
    render_vjp(view, 2 lambda(t2) (x0 - D(x_t2, t2, y))).

    Args:
        scene: SceneParams or raw theta vector.
        view: Pose operator.
        denoiser: Callable (x, t, y=None, cfg_w=None) -> denoised x.
        eps_star: The run's fixed noise (or a raw vector).
        t1: Noisier time, T >= t1 > t2, sigma(t1) > 0.
        t2: Cleaner time, >= 0.
        sched: Noise schedule.
        lam_mode: Loss weight mode, evaluated at t2.
        y: Optional condition label.
        cfg_w: Optional guidance weight.

    Returns:
        (loss, gradient w.r.t. theta, diagnostics) where diagnostics has
        keys "x_hat_0" (the held-constant student target) and "teacher"
        (the held-constant denoised target).
    """
    if t1 == 0.0 or float(sigma(sched, t1)) == 0.0:
        raise SingularityError("cds_step needs sigma(t1) > 0")
    if t2 > t1:
        raise OrderError(f"need t1 > t2, got t1={t1}, t2={t2}")
    eps = eps_star.eps_star if isinstance(eps_star, FixedNoise) else \
        np.asarray(eps_star, dtype=np.float64)
    sig1, sig2 = float(sigma(sched, t1)), float(sigma(sched, t2))
    lam = lambda_of(lam_mode, t2, sched)
    x_pi = render(scene, view)
    x_t1 = x_pi + sig1 * eps
    d = (x_t1 - denoiser(x_t1, t1, y=y, cfg_w=cfg_w)) / sig1
    x_t2 = x_t1 + (sig2 - sig1) * d
    x_hat_0 = x_pi + sig1 * (eps - d)
    teacher = denoiser(x_t2, t2, y=y, cfg_w=cfg_w)
    resid = x_hat_0 - teacher
    loss = lam * float(resid @ resid)
    grad = render_vjp(view, 2.0 * lam * resid)
    return loss, grad, {"x_hat_0": x_hat_0, "teacher": teacher}


def view_denoiser(denoiser, pose_id: int):
    """Resolve the denoiser bound to one pose.

    Accepts a per-view dispatcher (anything with for_view), a sequence
    indexed by pose id, or a single callable shared by every view.
    """
    if hasattr(denoiser, "for_view"):
        return denoiser.for_view(pose_id)
    if isinstance(denoiser, (list, tuple)):
        return denoiser[pose_id]
    return denoiser


def _init_theta(config: DistillRunConfig, task: SceneTask) -> np.ndarray:
    if config.init_theta is not None:
        if config.init_theta.shape != (task.d_scene,):
            raise ShapeError(
                f"init_theta has shape {config.init_theta.shape}, task needs "
                f"({task.d_scene},)"
            )
        return config.init_theta.copy()
    rng = named_stream(config.seed, "init")
    return config.init_scale * task.data_scale * rng.standard_normal(task.d_scene)


def run_distill(config: DistillRunConfig, task: SceneTask, denoiser,
                sched: NoiseSchedule | None = None,
                snapshot_iter: int | None = None) -> RunLog:
    """Run one full distillation loop and log every pose term.

    Per iteration: anneal (or draw) the anchor time t2, sample the pose
    batch, draw each pose's time, sum the pose gradients in pose-id
    order, and apply one optimizer update. All randomness derives from
    config.seed via the named substreams "eps_star", "t1", "poses",
    "init" (plus "t2" when t2_mode is "random").

    Args:
        config: Run configuration.
        task: Scene task; its views must share one observation dimension.
        denoiser: Callable (x, t, y=None, cfg_w=None) -> denoised x.
        sched: Noise schedule (defaults to the standard schedule).
        snapshot_iter: Optional iteration after whose update theta is
            captured into the log.

    Returns:
        RunLog with one record per (iteration, pose).

    Raises:
        DivergenceError: ||theta|| exceeded 1e9; carries the last finite
            state and the failing iteration.
    """
    sched = sched or NoiseSchedule()
    n = config.schedule.iters
    d_imgs = {v.d_img for v in task.views}
    if len(d_imgs) != 1:
        raise ConfigError("distillation needs all views to share one d_img")
    d_img = d_imgs.pop()
    if snapshot_iter is not None and not 0 <= snapshot_iter < max(n, 1):
        raise ConfigError(f"snapshot_iter {snapshot_iter} outside [0, {n})")

    eps_stream = named_stream(config.seed, "eps_star")
    t1_stream = named_stream(config.seed, "t1")
    pose_stream = named_stream(config.seed, "poses")
    t2_stream = named_stream(config.seed, "t2") if config.t2_mode == "random" else None

    theta = _init_theta(config, task)
    opt = init_optimizer(config.optimizer, theta, config.lr)
    horizon = sched.horizon
    delta_t = config.schedule.delta * horizon
    cap_t = config.schedule.cap_delta * horizon
    fixed = FixedNoise(eps_stream.standard_normal(d_img)) \
        if config.loss == "cds" and config.noise_mode == "fixed" else None

    records: list[dict] = []
    snapshot = None
    started = _time.perf_counter()
    for i in range(n):
        if config.t2_mode == "random":
            t2 = float(t2_stream.uniform(config.schedule.t_min * horizon,
                                         config.schedule.t_max * horizon))
        else:
            t2 = t2_of_iter(config.schedule, i, horizon)
        cfg_w = cfg_weight(i, n, *config.cfg) if config.cfg is not None else None
        noise = fixed if fixed is not None else \
            FixedNoise(eps_stream.standard_normal(d_img)) if config.loss == "cds" \
            else None
        pose_ids = np.sort(pose_stream.integers(0, len(task.views),
                                                size=config.poses_per_iter))
        total_grad = np.zeros_like(theta)
        pose_rows = []
        for pose in pose_ids:
            view = task.views[int(pose)]
            local = view_denoiser(denoiser, int(pose))
            if config.loss == "cds":
                t1 = sample_t1(t2, delta_t, cap_t, t1_stream, horizon=horizon)
                loss, grad, _ = cds_step(theta, view, local, noise, t1, t2,
                                         sched, config.lambda_mode,
                                         config.label, cfg_w)
                eps_hash = noise.hash
            else:
                t1 = float(t1_stream.uniform(config.schedule.t_min * horizon,
                                             config.schedule.t_max * horizon))
                eps = eps_stream.standard_normal(d_img)
                loss, grad, _ = _sds_terms(theta, view, local, t1, eps, sched,
                                           config.lambda_mode, config.label, cfg_w)
                eps_hash = array_hash(eps)
            total_grad += grad
            pose_rows.append({
                "i": i, "t1": t1, "t2": t2, "pose": int(pose),
                "loss": loss, "grad_norm": float(np.linalg.norm(grad)),
                "mode_distance": 0.0, "eps_hash": eps_hash,
            })
        last_good = theta
        theta = optimizer_update(opt, theta, total_grad)
        norm = float(np.linalg.norm(theta))
        if not np.isfinite(norm) or norm > _THETA_NORM_CEILING:
            raise DivergenceError(
                f"||theta|| = {norm:.3e} exceeded {_THETA_NORM_CEILING:.0e} "
                f"at iteration {i}",
                last_good=last_good, iteration=i,
            )
        _, _, aggregate = mode_distance(theta, task)
        for row in pose_rows:
            row["mode_distance"] = aggregate
        records.extend(pose_rows)
        if snapshot_iter is not None and i == snapshot_iter:
            snapshot = theta.copy()
    wall = _time.perf_counter() - started
    j_star, _, final_distance = mode_distance(theta, task)
    return RunLog(
        records=tuple(records),
        final_theta=theta,
        final_mode_index=j_star,
        final_distance=final_distance,
        wall_time=wall,
        snapshot_theta=snapshot,
        snapshot_iter=snapshot_iter,
    )


__all__ = [
    "DistillRunConfig",
    "FixedNoise",
    "RunLog",
    "lambda_of",
    "view_denoiser",
    "sds_grad",
    "cds_step",
    "run_distill",
]
