"""Reverse-time generation: stochastic ancestral and probability-flow ODE.

Both samplers walk a strictly decreasing uniform time grid from T to 0.
The ancestral sampler re-noises the current denoised estimate to the next
grid level and denoises again; the ODE sampler follows Euler steps of the
probability-flow field. Batched endpoint helpers vectorize many runs
through one denoiser call per step.
"""

from dataclasses import dataclass

import numpy as np
from numpy.random import Generator

from cdslab.errors import ConfigError, OrderError, ShapeError, SingularityError
from cdslab.schedule import NoiseSchedule, sigma, uniform_time_grid


@dataclass(frozen=True)
class Trajectory:
    """Iterates of one sampling run.

    Attributes:
        times: Strictly decreasing times, shape (m,).
        states: One state per time, shape (m, d).
        guidance_targets: Denoiser outputs per step, shape (m, d), or None.
    """

    times: np.ndarray
    states: np.ndarray
    guidance_targets: np.ndarray | None = None

    def __post_init__(self) -> None:
        times = np.asarray(self.times, dtype=np.float64)
        states = np.asarray(self.states, dtype=np.float64)
        if times.ndim != 1 or states.ndim != 2 or states.shape[0] != times.shape[0]:
            raise ShapeError(
                f"times {times.shape} and states {states.shape} must be (m,) and (m, d)"
            )
        if np.any(np.diff(times) >= 0):
            raise OrderError("trajectory times must be strictly decreasing")
        if not np.all(np.isfinite(states)):
            raise ShapeError("trajectory states must be finite")
        if self.guidance_targets is not None:
            g = np.asarray(self.guidance_targets, dtype=np.float64)
            if g.shape != states.shape:
                raise ShapeError(
                    f"guidance_targets {g.shape} must match states {states.shape}"
                )
            object.__setattr__(self, "guidance_targets", g)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)

    @property
    def endpoint(self) -> np.ndarray:
        return self.states[-1]


def euler_ode_step(denoiser, x_t1: np.ndarray, t1: float, t2: float,
                   sched: NoiseSchedule, y: int | None = None,
                   cfg_w: float | None = None) -> np.ndarray:
    """One Euler step of the probability-flow ODE from t1 down to t2.

    Args:
        denoiser: Callable (x, t, y=None, cfg_w=None) -> denoised x.
        x_t1: State(s) at time t1, shape (d,) or (n, d).
        t1: Current time, > 0.
        t2: Target time, with t1 > t2 >= 0.
        sched: Noise schedule.
        y: Optional condition label.
        cfg_w: Optional guidance weight.

    Returns:
        x_t1 + ((sigma(t2) - sigma(t1)) / sigma(t1)) * (x_t1 - D(x_t1, t1)).
    """
    if t1 == 0.0:
        raise SingularityError("euler_ode_step is undefined at t1 = 0")
    if not t1 > t2 or t2 < 0.0 or t1 > sched.horizon:
        raise OrderError(f"need T >= t1 > t2 >= 0, got t1={t1}, t2={t2}")
    x_t1 = np.asarray(x_t1, dtype=np.float64)
    sig1, sig2 = float(sigma(sched, t1)), float(sigma(sched, t2))
    d_out = denoiser(x_t1, t1, y=y, cfg_w=cfg_w)
    return x_t1 + ((sig2 - sig1) / sig1) * (x_t1 - d_out)


def ode_sample(denoiser, x_T: np.ndarray, n_steps: int, sched: NoiseSchedule,
               y: int | None = None, cfg_w: float | None = None) -> Trajectory:
    """Deterministic probability-flow sampling from x_T down to t = 0.

    Args:
        denoiser: Callable (x, t, y=None, cfg_w=None) -> denoised x.
        x_T: Initial state at time T, shape (d,).
        n_steps: Number of Euler steps, >= 1.
        sched: Noise schedule.
        y: Optional condition label.
        cfg_w: Optional guidance weight.

    Returns:
        Trajectory with n_steps + 1 times from T to 0; guidance_targets
        holds each step's denoiser output (the state itself at t = 0).
    """
    if n_steps < 1:
        raise ConfigError(f"n_steps must be >= 1, got {n_steps}")
    x_T = np.asarray(x_T, dtype=np.float64)
    times = uniform_time_grid(sched.horizon, n_steps + 1)
    states = np.empty((n_steps + 1, x_T.shape[-1]))
    targets = np.empty_like(states)
    x = x_T.copy()
    for i in range(n_steps):
        states[i] = x
        t1, t2 = float(times[i]), float(times[i + 1])
        sig1, sig2 = float(sigma(sched, t1)), float(sigma(sched, t2))
        d_out = denoiser(x, t1, y=y, cfg_w=cfg_w)
        targets[i] = d_out
        x = x + ((sig2 - sig1) / sig1) * (x - d_out)
    states[-1] = x
    targets[-1] = x
    return Trajectory(times=times, states=states, guidance_targets=targets)


def ancestral_sde_sample(denoiser, dim: int, n_steps: int, sched: NoiseSchedule,
                         rng: Generator, y: int | None = None,
                         cfg_w: float | None = None) -> Trajectory:
    """Stochastic ancestral sampling by re-noising denoised estimates.

    Starting from the zero estimate, each grid time t_i re-noises the
    previous estimate to level sigma(t_i) and denoises:
    x_{t_i} = est + sigma(t_i) * eps_i, est = D(x_{t_i}, t_i). The final
    grid time is 0, where the denoiser acts as the identity.

    Args:
        denoiser: Callable (x, t, y=None, cfg_w=None) -> denoised x.
        dim: State dimension d.
        n_steps: Number of grid times, >= 2.
        sched: Noise schedule.
        rng: Stream for the per-step noise.
        y: Optional condition label.
        cfg_w: Optional guidance weight.

    Returns:
        Trajectory of the denoised estimates at each grid time; states and
        guidance_targets coincide for this sampler.
    """
    if n_steps < 2:
        raise ConfigError(f"n_steps must be >= 2, got {n_steps}")
    times = uniform_time_grid(sched.horizon, n_steps)
    states = np.empty((n_steps, dim))
    est = np.zeros(dim)
    for i, t in enumerate(times):
        sig = float(sigma(sched, float(t)))
        if sig == 0.0:
            states[i] = est
            continue
        x_t = est + sig * rng.standard_normal(dim)
        est = denoiser(x_t, float(t), y=y, cfg_w=cfg_w)
        states[i] = est
    return Trajectory(times=times, states=states, guidance_targets=states.copy())


def ode_batch(denoiser, x_T: np.ndarray, n_steps: int, sched: NoiseSchedule,
              y: int | None = None, cfg_w: float | None = None,
              keep_first: int = 0):
    """Many ODE runs with one batched denoiser call per step.

    Args:
        denoiser: Batch-capable callable on (n, d) arrays.
        x_T: Initial states, shape (n, d).
        n_steps: Euler steps, >= 1.
        sched: Noise schedule.
        y: Optional condition label.
        cfg_w: Optional guidance weight.
        keep_first: Store full iterates for this many leading runs.

    Returns:
        (endpoints (n, d), kept) where kept is None or a dict with keys
        "times" (m,), "states" (m, keep_first, d), and "denoised"
        (m, keep_first, d); the final denoised row equals the state.
    """
    if n_steps < 1:
        raise ConfigError(f"n_steps must be >= 1, got {n_steps}")
    x = np.asarray(x_T, dtype=np.float64).copy()
    if x.ndim != 2:
        raise ShapeError(f"x_T must be (n, d), got shape {x.shape}")
    keep = min(int(keep_first), x.shape[0])
    times = uniform_time_grid(sched.horizon, n_steps + 1)
    kept_states = np.empty((n_steps + 1, keep, x.shape[1])) if keep else None
    kept_targets = np.empty_like(kept_states) if keep else None
    for i in range(n_steps):
        t1, t2 = float(times[i]), float(times[i + 1])
        sig1, sig2 = float(sigma(sched, t1)), float(sigma(sched, t2))
        d_out = denoiser(x, t1, y=y, cfg_w=cfg_w)
        if keep:
            kept_states[i] = x[:keep]
            kept_targets[i] = d_out[:keep]
        x += ((sig2 - sig1) / sig1) * (x - d_out)
    if keep:
        kept_states[-1] = x[:keep]
        kept_targets[-1] = x[:keep]
        return x, {"times": times, "states": kept_states, "denoised": kept_targets}
    return x, None


def ode_endpoints(denoiser, x_T: np.ndarray, n_steps: int, sched: NoiseSchedule,
                  y: int | None = None, cfg_w: float | None = None) -> np.ndarray:
    """Endpoints of many ODE runs; see ode_batch."""
    return ode_batch(denoiser, x_T, n_steps, sched, y=y, cfg_w=cfg_w)[0]


def ancestral_batch(denoiser, dim: int, n_runs: int, n_steps: int,
                    sched: NoiseSchedule, rng: Generator, y: int | None = None,
                    cfg_w: float | None = None, keep_first: int = 0):
    """Many ancestral runs with one batched denoiser call per grid time.

    Args:
        denoiser: Batch-capable callable on (n, d) arrays.
        dim: State dimension d.
        n_runs: Number of independent runs.
        n_steps: Grid times per run, >= 2.
        sched: Noise schedule.
        rng: Stream for the per-step noise.
        y: Optional condition label.
        cfg_w: Optional guidance weight.
        keep_first: Store full iterates for this many leading runs.

    Returns:
        (endpoints (n_runs, d), kept) with kept as in ode_batch; states
        and denoised coincide for this sampler.
    """
    if n_steps < 2:
        raise ConfigError(f"n_steps must be >= 2, got {n_steps}")
    if n_runs < 1:
        raise ConfigError(f"n_runs must be >= 1, got {n_runs}")
    keep = min(int(keep_first), n_runs)
    times = uniform_time_grid(sched.horizon, n_steps)
    kept_states = np.empty((n_steps, keep, dim)) if keep else None
    est = np.zeros((n_runs, dim))
    for i, t in enumerate(times):
        sig = float(sigma(sched, float(t)))
        if sig > 0.0:
            x_t = est + sig * rng.standard_normal((n_runs, dim))
            est = denoiser(x_t, float(t), y=y, cfg_w=cfg_w)
        if keep:
            kept_states[i] = est[:keep]
    if keep:
        return est, {"times": times, "states": kept_states,
                     "denoised": kept_states.copy()}
    return est, None


def ancestral_endpoints(denoiser, dim: int, n_runs: int, n_steps: int,
                        sched: NoiseSchedule, rng: Generator, y: int | None = None,
                        cfg_w: float | None = None) -> np.ndarray:
    """Endpoints of many ancestral runs; see ancestral_batch."""
    return ancestral_batch(denoiser, dim, n_runs, n_steps, sched, rng,
                           y=y, cfg_w=cfg_w)[0]


def gaussian_ode_oracle(x_t: np.ndarray, t: float, mu: np.ndarray, s: float,
                        sched: NoiseSchedule) -> np.ndarray:
    """Closed-form probability-flow endpoint for single-Gaussian data.

    For data N(mu, s^2 I) the flow contracts deviations from the mean by
    the factor s / sqrt(s^2 + sigma(t)^2).

    Args:
        x_t: State(s) at time t.
        t: Diffusion time.
        mu: Data mean.
        s: Data scale, > 0.
        sched: Noise schedule.

    Returns:
        Exact ODE endpoint at t = 0.
    """
    if s <= 0:
        raise ConfigError(f"scale must be positive, got {s}")
    x_t = np.asarray(x_t, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    sig = float(sigma(sched, t))
    return mu + (x_t - mu) * (s / np.sqrt(s**2 + sig**2))


__all__ = [
    "Trajectory",
    "euler_ode_step",
    "ode_sample",
    "ancestral_sde_sample",
    "ode_batch",
    "ode_endpoints",
    "ancestral_batch",
    "ancestral_endpoints",
    "gaussian_ode_oracle",
]
