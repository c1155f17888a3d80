"""Experiment drivers that turn claims into measurable numbers.

Four drivers: an arithmetic equivalence check between ancestral sampling
and idealized score distillation, a step-gap scan probing the O(gap)
error bound, a target-variance comparison between the two losses, and an
ablation suite over the schedule and noise choices.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from cdslab.distill import DistillRunConfig, run_distill, view_denoiser
from cdslab.errors import ConfigError, DivergenceError, ScanError
from cdslab.rng import named_stream
from cdslab.samplers import ancestral_sde_sample
from cdslab.scene import SceneTask, render
from cdslab.schedule import NoiseSchedule, ScheduleParams, sigma, t2_of_iter, sample_t1

_ABLATION_ARMS = ("random-t2", "fixed-t1", "resampled-noise", "full")


def fanout_workers() -> int:
    """Worker count for scan fan-out, capped by CDSLAB_THREADS."""
    cap = os.environ.get("CDSLAB_THREADS")
    if cap is not None:
        try:
            value = int(cap)
        except ValueError as exc:
            raise ConfigError(f"CDSLAB_THREADS must be an integer, got {cap!r}") from exc
        if value < 1:
            raise ConfigError(f"CDSLAB_THREADS must be >= 1, got {value}")
        return value
    return min(4, os.cpu_count() or 1)


def sds_sde_equivalence(denoiser, dim: int, n_steps: int, seed: int,
                        sched: NoiseSchedule | None = None) -> float:
    """Max deviation between ancestral sampling and idealized distillation.

    Runs the ancestral sampler, then a distillation loop on an identity
    view where each iteration minimizes its objective exactly (direct
    assignment x_pi <- D(x_pi + sigma eps, t)), feeding both the same
    noise substream. The two sequences execute identical arithmetic, so
    the deviation is 0 up to floating-point identity.

    Args:
        denoiser: Callable (x, t, y=None, cfg_w=None) -> denoised x.
        dim: State dimension.
        n_steps: Grid times, >= 2.
        seed: Seed for the shared noise substream.
        sched: Noise schedule (defaults to the standard schedule).

    Returns:
        max over grid times of ||ancestral estimate - distilled x_pi||.
    """
    sched = sched or NoiseSchedule()
    traj = ancestral_sde_sample(denoiser, dim, n_steps, sched,
                                named_stream(seed, "ancestral"))
    rng = named_stream(seed, "ancestral")
    x_pi = np.zeros(dim)
    deviation = 0.0
    for t, state in zip(traj.times, traj.states):
        sig = float(sigma(sched, float(t)))
        if sig > 0.0:
            x_t = x_pi + sig * rng.standard_normal(dim)
            x_pi = denoiser(x_t, float(t), y=None, cfg_w=None)
        deviation = max(deviation, float(np.linalg.norm(state - x_pi)))
    return deviation


@dataclass(frozen=True)
class ScanResult:
    """Step-gap scan outcome.

    Attributes:
        deltas: Gap fractions, strictly increasing.
        errors: Median final error per gap (raw), nonnegative.
        floored_errors: Errors with the extrapolated zero-gap floor
            subtracted (clipped to a tiny positive value).
        floor: The extrapolated zero-gap error floor.
        slope: Least-squares slope of log(floored error) vs log(gap).
        seeds: Seeds used per gap.
        runs: One dict per constituent run: delta, seed, final_error.
    """

    deltas: tuple[float, ...]
    errors: tuple[float, ...]
    floored_errors: tuple[float, ...]
    floor: float
    slope: float
    seeds: tuple[int, ...]
    runs: tuple[dict, ...]

    def __post_init__(self) -> None:
        if any(b <= a for a, b in zip(self.deltas, self.deltas[1:])):
            raise ConfigError(f"deltas must be strictly increasing, got {self.deltas}")
        if any(e < 0 for e in self.errors):
            raise ConfigError("scan errors must be nonnegative")


def _scan_one(base: DistillRunConfig, task: SceneTask, denoiser,
              sched: NoiseSchedule, delta: float, seed: int) -> float:
    params = replace(base.schedule, delta=delta / 2.0, cap_delta=delta)
    config = replace(base, schedule=params, seed=seed)
    try:
        log = run_distill(config, task, denoiser, sched=sched)
    except DivergenceError as exc:
        raise ScanError(
            f"scan run delta={delta} seed={seed} diverged at iteration "
            f"{exc.iteration}"
        ) from exc
    return log.final_distance


def theorem1_scan(base: DistillRunConfig, task: SceneTask, denoiser,
                  delta_fractions, seeds_per_delta: int,
                  sched: NoiseSchedule | None = None) -> ScanResult:
    """Scan the maximum step gap and fit the error's log-log slope.

    For each gap fraction (with the lower offset fixed at half the gap),
    runs the full distillation budget over several seeds and takes the
    median final mode distance. The zero-gap floor is extrapolated
    linearly from the two smallest gaps and subtracted before fitting.

    Args:
        base: Base run configuration; delta, cap_delta, and seed are
            overridden per run.
        task: Scene task.
        denoiser: Shared denoiser callable.
        delta_fractions: At least 3 distinct gap fractions of the horizon.
        seeds_per_delta: Seeds per gap, >= 1.
        sched: Noise schedule (defaults to the standard schedule).

    Returns:
        ScanResult ordered by increasing gap.

    Raises:
        ScanError: A constituent run diverged (the message names it).
    """
    sched = sched or NoiseSchedule()
    deltas = sorted(float(d) for d in set(delta_fractions))
    if len(deltas) < 3:
        raise ConfigError(f"scan needs >= 3 distinct gaps, got {deltas}")
    if seeds_per_delta < 1:
        raise ConfigError(f"seeds_per_delta must be >= 1, got {seeds_per_delta}")
    for d in deltas:
        if base.schedule.t_max + d > 1.0 + 1e-12:
            raise ConfigError(
                f"gap {d} pushes t1 beyond the horizon (t_max={base.schedule.t_max})"
            )
    seeds = tuple(base.seed + k for k in range(seeds_per_delta))
    jobs = [(d, s) for d in deltas for s in seeds]
    with ThreadPoolExecutor(max_workers=fanout_workers()) as pool:
        futures = {
            (d, s): pool.submit(_scan_one, base, task, denoiser, sched, d, s)
            for d, s in jobs
        }
        results = {key: fut.result() for key, fut in futures.items()}
    runs = tuple(
        {"delta": d, "seed": s, "final_error": results[(d, s)]} for d, s in jobs
    )
    errors = [float(np.median([results[(d, s)] for s in seeds])) for d in deltas]
    # Zero-gap floor: linear extrapolation through the two smallest gaps.
    d0, d1 = deltas[0], deltas[1]
    e0, e1 = errors[0], errors[1]
    floor = float(np.clip(e0 - d0 * (e1 - e0) / (d1 - d0), 0.0, min(errors)))
    floored = [max(e - floor, 1e-12) for e in errors]
    slope, _ = np.polyfit(np.log(deltas), np.log(floored), 1)
    return ScanResult(
        deltas=tuple(deltas),
        errors=tuple(errors),
        floored_errors=tuple(floored),
        floor=floor,
        slope=float(slope),
        seeds=seeds,
        runs=runs,
    )


def guidance_variance_compare(theta: np.ndarray, task: SceneTask, denoiser,
                              config: DistillRunConfig, samples: int,
                              sched: NoiseSchedule | None = None,
                              snapshot_iter: int | None = None
                              ) -> tuple[float, float, float]:
    """Across-draw spread of the two losses' targets at a fixed state.

    Both statistics are the mean coordinatewise standard deviation over
    re-drawn targets at view 0. The baseline target D(x_t, t) re-draws
    both t and the noise; the consistency target re-draws only t1 while
    keeping the run's fixed noise, with t2 held at its mid-run annealed
    value.

    Args:
        theta: Scene parameters (typically a mid-run snapshot).
        task: Scene task.
        denoiser: Shared denoiser callable.
        config: Run configuration supplying schedule, seed, and label.
        samples: Re-draws per statistic, >= 2.
        sched: Noise schedule (defaults to the standard schedule).
        snapshot_iter: Iteration whose annealed t2 anchors the t1 window
            (defaults to the midpoint of the budget).

    Returns:
        (baseline std, consistency std, ratio consistency/baseline);
        the ratio is 0 when both spreads are 0.
    """
    sched = sched or NoiseSchedule()
    if samples < 2:
        raise ConfigError(f"samples must be >= 2, got {samples}")
    view = task.views[0]
    horizon = sched.horizon
    params = config.schedule
    i_mid = snapshot_iter if snapshot_iter is not None else params.iters // 2
    t2 = t2_of_iter(params, i_mid, horizon)
    cfg_w = None
    if config.cfg is not None:
        w_start, w_end = config.cfg
        cfg_w = w_start + (w_end - w_start) * (i_mid / max(params.iters, 1))
    x_pi = render(theta, view)
    local = view_denoiser(denoiser, 0)
    rng = named_stream(config.seed, "variance")
    eps_star = named_stream(config.seed, "eps_star").standard_normal(view.d_img)

    sds_targets = np.empty((samples, view.d_img))
    for k in range(samples):
        t = float(rng.uniform(params.t_min * horizon, params.t_max * horizon))
        eps = rng.standard_normal(view.d_img)
        x_t = x_pi + float(sigma(sched, t)) * eps
        sds_targets[k] = local(x_t, t, y=config.label, cfg_w=cfg_w)

    cds_targets = np.empty((samples, view.d_img))
    for k in range(samples):
        t1 = sample_t1(t2, params.delta * horizon, params.cap_delta * horizon,
                       rng, horizon=horizon)
        x_t1 = x_pi + float(sigma(sched, t1)) * eps_star
        cds_targets[k] = local(x_t1, t1, y=config.label, cfg_w=cfg_w)

    sds_std = float(np.mean(np.std(sds_targets, axis=0)))
    cds_std = float(np.mean(np.std(cds_targets, axis=0)))
    if sds_std == 0.0:
        ratio = 0.0 if cds_std == 0.0 else float("inf")
    else:
        ratio = cds_std / sds_std
    return sds_std, cds_std, ratio


@dataclass(frozen=True)
class AblationResult:
    """Per-arm, per-seed final errors plus per-arm medians."""

    rows: tuple[dict, ...]
    medians: dict

    @property
    def arms(self) -> tuple[str, ...]:
        return _ABLATION_ARMS


def _arm_config(base: DistillRunConfig, arm: str, seed: int) -> DistillRunConfig:
    if arm == "random-t2":
        return replace(base, t2_mode="random", seed=seed)
    if arm == "fixed-t1":
        params = replace(base.schedule, delta=base.schedule.cap_delta)
        return replace(base, schedule=params, seed=seed)
    if arm == "resampled-noise":
        return replace(base, noise_mode="resampled", seed=seed)
    if arm == "full":
        return replace(base, seed=seed)
    raise ConfigError(f"unknown ablation arm {arm!r}")


def ablation_suite(task: SceneTask, denoiser, base: DistillRunConfig,
                   n_seeds: int = 5,
                   sched: NoiseSchedule | None = None) -> AblationResult:
    """Final errors for the four schedule/noise ablation arms.

    Arms: "random-t2" draws the anchor time uniformly instead of
    annealing it; "fixed-t1" collapses the t1 window to its lower edge;
    "resampled-noise" redraws the noise each iteration; "full" is the
    unmodified configuration. All arms share the same seed list.

    Args:
        task: Scene task.
        denoiser: Shared denoiser callable.
        base: Base run configuration (the "full" arm).
        n_seeds: Seeds per arm, >= 1.
        sched: Noise schedule (defaults to the standard schedule).

    Returns:
        AblationResult with one row per (arm, seed) and per-arm medians.
    """
    sched = sched or NoiseSchedule()
    if n_seeds < 1:
        raise ConfigError(f"n_seeds must be >= 1, got {n_seeds}")
    seeds = tuple(base.seed + k for k in range(n_seeds))
    jobs = [(arm, s) for arm in _ABLATION_ARMS for s in seeds]
    with ThreadPoolExecutor(max_workers=fanout_workers()) as pool:
        futures = {
            (arm, s): pool.submit(run_distill, _arm_config(base, arm, s), task,
                                  denoiser, sched)
            for arm, s in jobs
        }
        results = {key: fut.result().final_distance for key, fut in futures.items()}
    rows = tuple(
        {"arm": arm, "seed": s, "final_error": results[(arm, s)]} for arm, s in jobs
    )
    medians = {
        arm: float(np.median([results[(arm, s)] for s in seeds]))
        for arm in _ABLATION_ARMS
    }
    return AblationResult(rows=rows, medians=medians)


def default_recovery_config(seed: int = 0, iters: int = 2000) -> DistillRunConfig:
    """Standard consistency-distillation configuration for the benchmark task."""
    params = ScheduleParams(t_min=0.1, t_max=0.7, delta=0.1, cap_delta=0.2,
                            iters=iters)
    return DistillRunConfig(schedule=params, loss="cds", lr=0.02,
                            optimizer="adam", seed=seed, poses_per_iter=4)


__all__ = [
    "fanout_workers",
    "sds_sde_equivalence",
    "ScanResult",
    "theorem1_scan",
    "guidance_variance_compare",
    "AblationResult",
    "ablation_suite",
    "default_recovery_config",
]
