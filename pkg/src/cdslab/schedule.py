"""Noise level as a function of time and iteration-indexed time schedules.

The noise schedule fixes the perturbation kernel std sigma(t); the only
implemented kind is "edm-linear", meaning sigma(t) = t on [0, T]. Schedule
parameters are stored as fractions of the horizon T so one configuration is
portable across data distributions.
"""

from dataclasses import dataclass

import numpy as np
from numpy.random import Generator

from cdslab.errors import ConfigError, DomainError

_KINDS = ("edm-linear",)


@dataclass(frozen=True)
class NoiseSchedule:
    """Perturbation kernel noise level over diffusion time.

    Attributes:
        horizon: Maximum diffusion time T (dimensionless, > 0).
        kind: Schedule family; only "edm-linear" (sigma(t) = t) exists.
    """

    horizon: float = 10.0
    kind: str = "edm-linear"

    def __post_init__(self) -> None:
        if not (np.isfinite(self.horizon) and self.horizon > 0):
            raise ConfigError(f"horizon must be a positive real, got {self.horizon}")
        if self.kind not in _KINDS:
            raise ConfigError(f"unknown schedule kind {self.kind!r}, expected one of {_KINDS}")


@dataclass(frozen=True)
class ScheduleParams:
    """Iteration-indexed time schedule knobs, all as fractions of T.

    Attributes:
        t_min: Lower end of the annealed anchor time t2, in [0, 1).
        t_max: Upper end of the annealed anchor time t2, in (t_min, 1].
        delta: Lower offset of the t1 window above t2, >= 0.
        cap_delta: Upper offset of the t1 window above t2; the window
            degenerates to a point when delta == cap_delta.
        iters: Total iteration budget N, >= 0.
    """

    t_min: float
    t_max: float
    delta: float
    cap_delta: float
    iters: int

    def __post_init__(self) -> None:
        problems = []
        if not (0.0 <= self.t_min < 1.0):
            problems.append(f"t_min must lie in [0, 1), got {self.t_min}")
        if not (self.t_min < self.t_max <= 1.0):
            problems.append(f"t_max must lie in (t_min, 1], got {self.t_max}")
        if self.delta < 0.0:
            problems.append(f"delta must be nonnegative, got {self.delta}")
        if self.delta > self.cap_delta:
            problems.append(
                f"delta ({self.delta}) exceeds cap_delta ({self.cap_delta}); "
                "the t1 window would be empty"
            )
        if self.t_max + self.cap_delta > 1.0 + 1e-12:
            problems.append(
                f"t_max + cap_delta = {self.t_max + self.cap_delta} exceeds 1; "
                "t1 would pass the horizon"
            )
        if self.iters < 0:
            problems.append(f"iters must be nonnegative, got {self.iters}")
        if problems:
            raise ConfigError("; ".join(problems))


def sigma(sched: NoiseSchedule, t) -> np.ndarray | float:
    """Noise level sigma(t) of the perturbation kernel.

    Args:
        sched: Noise schedule.
        t: Time in [0, T], scalar or array.

    Returns:
        sigma(t); for "edm-linear" this is t itself.
    """
    arr = np.asarray(t, dtype=np.float64)
    if np.any(arr < 0.0) or np.any(arr > sched.horizon):
        raise DomainError(f"time {t} outside [0, {sched.horizon}]")
    return arr if arr.ndim else float(arr)


def sigma_dot(sched: NoiseSchedule, t) -> np.ndarray | float:
    """Time derivative of sigma at t (identically 1 for "edm-linear")."""
    arr = np.asarray(t, dtype=np.float64)
    if np.any(arr < 0.0) or np.any(arr > sched.horizon):
        raise DomainError(f"time {t} outside [0, {sched.horizon}]")
    out = np.ones_like(arr)
    return out if arr.ndim else float(out)


def t2_of_iter(params: ScheduleParams, i: int, horizon: float) -> float:
    """Annealed anchor time for iteration i.

    t2 decreases from t_max * T at i = 0 to t_min * T at i = N following a
    square-root-in-iteration profile.

    Args:
        params: Schedule parameters (fractions of the horizon).
        i: Iteration index in [0, N].
        horizon: Horizon T that converts fractions to times.

    Returns:
        The anchor time t2, monotonically nonincreasing in i.
    """
    n = params.iters
    if not 0 <= i <= n:
        raise DomainError(f"iteration {i} outside [0, {n}]")
    if n == 0:
        return float(horizon * params.t_max)
    frac = params.t_max - (params.t_max - params.t_min) * np.sqrt(i / n)
    return float(horizon * frac)


def sample_t1(t2: float, delta: float, cap_delta: float, rng: Generator,
              horizon: float | None = None) -> float:
    """Draw the noisier time t1 uniformly from [t2 + delta, t2 + cap_delta].

    Offsets here are absolute times, not fractions. A zero-width window
    (delta == cap_delta) returns the endpoint exactly; one uniform draw is
    consumed either way so stream layouts stay stable.

    Args:
        t2: Anchor time.
        delta: Lower window offset.
        cap_delta: Upper window offset, >= delta.
        rng: Random stream owned by the caller.
        horizon: Optional horizon T; when given, t2 + cap_delta must not
            exceed it.

    Returns:
        t1 with t2 + delta <= t1 <= t2 + cap_delta and t1 > t2.
    """
    if delta > cap_delta:
        raise ConfigError(f"delta ({delta}) exceeds cap_delta ({cap_delta})")
    if horizon is not None and t2 + cap_delta > horizon + 1e-12:
        raise DomainError(
            f"t2 + cap_delta = {t2 + cap_delta} exceeds the horizon {horizon}"
        )
    return float(rng.uniform(t2 + delta, t2 + cap_delta))


def cfg_weight(i: int, n: int, w_start: float, w_end: float) -> float:
    """Linearly annealed guidance weight at iteration i of n.

    Args:
        i: Current iteration.
        n: Total iterations, >= 1.
        w_start: Weight at i = 0.
        w_end: Weight at i = n.

    Returns:
        w_start + (w_end - w_start) * (i / n).
    """
    if n < 1:
        raise ConfigError(f"total iterations must be >= 1, got {n}")
    return float(w_start + (w_end - w_start) * (i / n))


def uniform_time_grid(horizon: float, n_points: int) -> np.ndarray:
    """Strictly decreasing uniform grid from T to 0 with n_points entries."""
    if n_points < 2:
        raise ConfigError(f"grid needs at least 2 points, got {n_points}")
    return np.linspace(horizon, 0.0, n_points)


__all__ = [
    "NoiseSchedule",
    "ScheduleParams",
    "sigma",
    "sigma_dot",
    "t2_of_iter",
    "sample_t1",
    "cfg_weight",
    "uniform_time_grid",
]
