"""Gaussian-mixture data distributions with exact denoiser and score.

A mixture of isotropic Gaussians stays a mixture of isotropic Gaussians
under the perturbation kernel (per-component variance grows from s_i^2 to
s_i^2 + sigma_t^2), so the Bayes posterior mean E[x0 | x_t], the score of
the perturbed density, conditioning on a label, and classifier-free
guidance all have closed forms. These oracles stand in for a pre-trained
denoiser network.
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.random import Generator
from scipy.special import logsumexp

from cdslab.errors import ConditionError, ConfigError, ShapeError, SingularityError
from cdslab.schedule import NoiseSchedule, sigma

_WEIGHT_TOL = 1e-12


@dataclass(frozen=True)
class Component:
    """One isotropic Gaussian component.

    Attributes:
        weight: Mixture weight, > 0.
        mean: Component mean, shape (d,).
        scale: Isotropic std s, > 0 (use 1e-12 to represent a point mass).
        label: Condition label carried by the component.
    """

    weight: float
    mean: np.ndarray
    scale: float
    label: int = 0


@dataclass(frozen=True)
class GaussianMixture:
    """Immutable Gaussian mixture over R^d with per-component labels."""

    components: tuple[Component, ...]
    # Dense views of the component fields, built once for vectorized math.
    _means: np.ndarray = field(init=False, repr=False, compare=False)
    _weights: np.ndarray = field(init=False, repr=False, compare=False)
    _scales: np.ndarray = field(init=False, repr=False, compare=False)
    _labels: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not self.components:
            raise ConfigError("mixture needs at least one component")
        try:
            means = np.asarray([c.mean for c in self.components], dtype=np.float64)
        except ValueError as exc:
            raise ShapeError("component means must share one dimension d") from exc
        if means.ndim != 2:
            raise ShapeError("component means must share one dimension d")
        weights = np.asarray([c.weight for c in self.components], dtype=np.float64)
        scales = np.asarray([c.scale for c in self.components], dtype=np.float64)
        labels = np.asarray([c.label for c in self.components], dtype=np.int64)
        if np.any(weights <= 0) or abs(weights.sum() - 1.0) > _WEIGHT_TOL:
            raise ConfigError(f"weights must be positive and sum to 1, got {weights}")
        if np.any(scales <= 0):
            raise ConfigError("component scales must be strictly positive")
        if not np.all(np.isfinite(means)):
            raise ConfigError("component means must be finite")
        if np.any(labels < 0):
            raise ConfigError("labels must be small nonnegative integers")
        object.__setattr__(self, "_means", means)
        object.__setattr__(self, "_weights", weights)
        object.__setattr__(self, "_scales", scales)
        object.__setattr__(self, "_labels", labels)

    @property
    def dim(self) -> int:
        return self._means.shape[1]

    @property
    def labels(self) -> tuple[int, ...]:
        return tuple(sorted(set(int(v) for v in self._labels)))


@dataclass(frozen=True)
class DenoiserQuery:
    """Arguments of one denoiser evaluation.

    Attributes:
        x: Point(s) being denoised, shape (d,) or (n, d).
        t: Diffusion time in [0, T].
        y: Optional condition label restricting the mixture.
        cfg_w: Optional guidance weight; requires y.
    """

    x: np.ndarray
    t: float
    y: int | None = None
    cfg_w: float | None = None

    def __post_init__(self) -> None:
        if self.cfg_w is not None and self.y is None:
            raise ConfigError("cfg_w requires a condition label y")


def perturb(x0: np.ndarray, t: float, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Forward perturbation x_t = x0 + sigma(t) * eps.

    Args:
        x0: Clean point(s).
        t: Diffusion time.
        eps: Unit-Gaussian draw(s), same shape as x0.
        sched: Noise schedule.

    Returns:
        The noised point(s).
    """
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ShapeError(f"x0 shape {x0.shape} != eps shape {eps.shape}")
    return x0 + sigma(sched, t) * eps


def _select(gmm: GaussianMixture, y: int | None):
    """Means, weights (renormalized), and scales, restricted to label y."""
    if y is None:
        return gmm._means, gmm._weights, gmm._scales
    mask = gmm._labels == int(y)
    if not np.any(mask):
        raise ConditionError(f"no component carries label {y}")
    w = gmm._weights[mask]
    return gmm._means[mask], w / w.sum(), gmm._scales[mask]


def _posterior_mean(x: np.ndarray, sig: float, means, weights, scales) -> np.ndarray:
    """Bayes posterior mean E[x0 | x_t = x] for x of shape (..., d)."""
    var = scales**2 + sig**2                                   # (K,)
    diff = x[..., None, :] - means                             # (..., K, d)
    logr = np.log(weights) - 0.5 * np.sum(diff**2, axis=-1) / var \
        - 0.5 * x.shape[-1] * np.log(var)
    logr = logr - logsumexp(logr, axis=-1, keepdims=True)
    resp = np.exp(logr)                                        # (..., K)
    shrink = scales**2 / var                                   # (K,)
    post = means + shrink[:, None] * diff                      # (..., K, d)
    return np.einsum("...k,...kd->...d", resp, post)


def denoise(gmm: GaussianMixture, q: DenoiserQuery, sched: NoiseSchedule) -> np.ndarray:
    """Exact posterior-mean denoiser E[x0 | x_t], optionally guided.

    With a label y, the posterior is over the label's components only
    (renormalized weights). With a guidance weight w, the result is
    D_uncond + w * (D_cond - D_uncond), combined in denoiser space.

    Args:
        gmm: Data distribution.
        q: Query point, time, optional label, optional guidance weight.
        sched: Noise schedule.

    Returns:
        Denoised point(s), same shape as q.x. At sigma(t) = 0 returns x
        exactly.
    """
    x = np.asarray(q.x, dtype=np.float64)
    if x.shape[-1] != gmm.dim:
        raise ShapeError(f"x has dimension {x.shape[-1]}, mixture has {gmm.dim}")
    sig = float(sigma(sched, q.t))
    if sig == 0.0:
        return x.copy()
    if q.cfg_w is not None:
        # Degenerate weights reduce exactly, not just to rounding error.
        if q.cfg_w == 1.0:
            return _posterior_mean(x, sig, *_select(gmm, q.y))
        if q.cfg_w == 0.0:
            return _posterior_mean(x, sig, *_select(gmm, None))
        d_cond = _posterior_mean(x, sig, *_select(gmm, q.y))
        d_unc = _posterior_mean(x, sig, *_select(gmm, None))
        return d_unc + q.cfg_w * (d_cond - d_unc)
    return _posterior_mean(x, sig, *_select(gmm, q.y))


def score(gmm: GaussianMixture, q: DenoiserQuery, sched: NoiseSchedule) -> np.ndarray:
    """Score of the perturbed density, (D(x, t) - x) / sigma_t^2.

    Args:
        gmm: Data distribution.
        q: Query; q.t must satisfy sigma(t) > 0.
        sched: Noise schedule.

    Returns:
        Gradient of log p_t at q.x.
    """
    sig = float(sigma(sched, q.t))
    if sig == 0.0:
        raise SingularityError("score is undefined at sigma(t) = 0")
    return (denoise(gmm, q, sched) - np.asarray(q.x, dtype=np.float64)) / sig**2


def log_density(gmm: GaussianMixture, x: np.ndarray, t: float,
                sched: NoiseSchedule, y: int | None = None) -> np.ndarray | float:
    """Log density of the perturbed mixture at time t.

    Args:
        gmm: Data distribution.
        x: Point(s), shape (d,) or (n, d).
        t: Diffusion time in [0, T].
        sched: Noise schedule.
        y: Optional label restricting (and renormalizing) the mixture.

    Returns:
        log p_t(x), scalar for a single point.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != gmm.dim:
        raise ShapeError(f"x has dimension {x.shape[-1]}, mixture has {gmm.dim}")
    means, weights, scales = _select(gmm, y)
    sig = float(sigma(sched, t))
    var = scales**2 + sig**2
    d = gmm.dim
    diff = x[..., None, :] - means
    logp = (
        np.log(weights)
        - 0.5 * np.sum(diff**2, axis=-1) / var
        - 0.5 * d * (np.log(2.0 * np.pi) + np.log(var))
    )
    out = logsumexp(logp, axis=-1)
    return out if out.ndim else float(out)


def sample_data(gmm: GaussianMixture, rng: Generator, y: int | None = None,
                n: int | None = None) -> np.ndarray:
    """Draw from the (optionally label-restricted) data distribution.

    Args:
        gmm: Data distribution.
        rng: Random stream owned by the caller.
        y: Optional condition label.
        n: Optional number of draws; omitted means a single (d,) draw.

    Returns:
        Array of shape (d,) or (n, d).
    """
    means, weights, scales = _select(gmm, y)
    count = 1 if n is None else int(n)
    idx = rng.choice(len(weights), size=count, p=weights)
    eps = rng.standard_normal((count, gmm.dim))
    out = means[idx] + scales[idx][:, None] * eps
    return out[0] if n is None else out


class OracleDenoiser:
    """Callable adapter: denoiser(x, t, y=None, cfg_w=None) over a mixture."""

    def __init__(self, gmm: GaussianMixture, sched: NoiseSchedule):
        self.gmm = gmm
        self.sched = sched

    def __call__(self, x: np.ndarray, t: float, y: int | None = None,
                 cfg_w: float | None = None) -> np.ndarray:
        return denoise(self.gmm, DenoiserQuery(x=x, t=t, y=y, cfg_w=cfg_w), self.sched)


def as_denoiser(gmm: GaussianMixture, sched: NoiseSchedule) -> OracleDenoiser:
    """Bind a mixture and schedule into the shared denoiser interface."""
    return OracleDenoiser(gmm, sched)


def single_gaussian(mean, scale: float, label: int = 0) -> GaussianMixture:
    """Convenience constructor for a one-component mixture."""
    mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
    return GaussianMixture((Component(1.0, mean, scale, label),))


__all__ = [
    "Component",
    "GaussianMixture",
    "DenoiserQuery",
    "perturb",
    "denoise",
    "score",
    "log_density",
    "sample_data",
    "OracleDenoiser",
    "as_denoiser",
    "single_gaussian",
]
