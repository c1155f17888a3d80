"""Small MLP denoiser trained by denoising score matching.

The network maps [x, log sigma_t] (dimension d+1) through tanh hidden
layers to a prediction of the clean point x0 (dimension d). Gradients are
derived by hand so the package stays framework-free; parameters live in
one flat float64 vector, which keeps optimizer interop and serialization
trivial.
"""

import json
from dataclasses import dataclass

import numpy as np
from numpy.random import Generator

from cdslab.errors import (
    ConditionError,
    ConfigError,
    DomainError,
    InputError,
    ShapeError,
    StateError,
    TrainingError,
)
from cdslab.mixture import GaussianMixture, sample_data
from cdslab.optim import init_optimizer, optimizer_update
from cdslab.schedule import NoiseSchedule, sigma

_T_FLOOR_FRACTION = 0.01
_LOSS_CEILING = 1e6


def _param_count(widths: tuple[int, ...]) -> int:
    return sum(widths[i + 1] * widths[i] + widths[i + 1] for i in range(len(widths) - 1))


@dataclass(frozen=True)
class MlpDenoiser:
    """Tanh MLP over [x, log sigma_t] with a flat parameter vector.

    Attributes:
        widths: Layer widths; widths[0] = d + 1 and widths[-1] = d.
        params: All weights and biases, flattened layer by layer
            (weights row-major, then biases).
        activation: Hidden-layer nonlinearity; only "tanh" is supported.
    """

    widths: tuple[int, ...]
    params: np.ndarray
    activation: str = "tanh"

    def __post_init__(self) -> None:
        widths = tuple(int(w) for w in self.widths)
        if len(widths) < 2 or any(w <= 0 for w in widths):
            raise ConfigError(f"widths must be >= 2 positive layer sizes, got {widths}")
        if widths[0] != widths[-1] + 1:
            raise ConfigError(
                f"input width must be output width + 1 for [x, log sigma], got {widths}"
            )
        if self.activation != "tanh":
            raise ConfigError(f"unsupported activation {self.activation!r}")
        params = np.asarray(self.params, dtype=np.float64)
        if params.shape != (_param_count(widths),):
            raise ShapeError(
                f"params has shape {params.shape}, widths {widths} need "
                f"({_param_count(widths)},)"
            )
        object.__setattr__(self, "widths", widths)
        object.__setattr__(self, "params", params)

    @property
    def dim(self) -> int:
        return self.widths[-1]


def _unpack(net: MlpDenoiser) -> list[tuple[np.ndarray, np.ndarray]]:
    """Views (no copies) of (weight, bias) per layer from the flat vector."""
    layers = []
    offset = 0
    for fan_in, fan_out in zip(net.widths[:-1], net.widths[1:]):
        w = net.params[offset:offset + fan_out * fan_in].reshape(fan_out, fan_in)
        offset += fan_out * fan_in
        b = net.params[offset:offset + fan_out]
        offset += fan_out
        layers.append((w, b))
    return layers


def init_mlp(d: int, hidden: tuple[int, ...] = (64, 64), rng: Generator | None = None,
             scale: float | None = None) -> MlpDenoiser:
    """Build a freshly initialized denoiser for d-dimensional data.

    Args:
        d: Data dimension.
        hidden: Hidden layer widths.
        rng: Stream for weight draws; zero weights if omitted.
        scale: Weight std per layer; 1/sqrt(fan_in) if omitted.

    Returns:
        An MlpDenoiser with zero biases.
    """
    if d < 1:
        raise ConfigError(f"data dimension must be >= 1, got {d}")
    widths = (d + 1, *hidden, d)
    chunks = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        std = scale if scale is not None else 1.0 / np.sqrt(fan_in)
        w = rng.standard_normal((fan_out, fan_in)) * std if rng is not None \
            else np.zeros((fan_out, fan_in))
        chunks.append(w.ravel())
        chunks.append(np.zeros(fan_out))
    return MlpDenoiser(widths=widths, params=np.concatenate(chunks))


def _forward_batch(net: MlpDenoiser, x: np.ndarray, log_sig: np.ndarray,
                   keep: bool = False):
    """Forward pass on (n, d) inputs with per-row log sigmas.

    Returns the (n, d) output, plus per-layer activations when keep is
    set (needed by backprop).
    """
    if not np.all(np.isfinite(net.params)):
        raise StateError("network parameters are not finite")
    h = np.concatenate([x, log_sig[:, None]], axis=1)
    acts = [h]
    layers = _unpack(net)
    for i, (w, b) in enumerate(layers):
        h = h @ w.T + b
        if i < len(layers) - 1:
            h = np.tanh(h)
        if keep:
            acts.append(h)
    return (h, acts) if keep else h


def forward(net: MlpDenoiser, x: np.ndarray, t: float, sched: NoiseSchedule) -> np.ndarray:
    """Denoiser prediction D(x, t) for one point or a batch.

    Args:
        net: Network parameters.
        x: Input point(s), shape (d,) or (n, d).
        t: Diffusion time, must satisfy sigma(t) > 0.
        sched: Noise schedule.

    Returns:
        Prediction with the same shape as x.
    """
    sig = float(sigma(sched, t))
    if sig <= 0.0:
        raise DomainError(f"forward needs sigma(t) > 0, got t={t}")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.shape[1] != net.dim:
        raise ShapeError(f"x has dimension {xb.shape[1]}, network expects {net.dim}")
    out = _forward_batch(net, xb, np.full(xb.shape[0], np.log(sig)))
    return out[0] if single else out


def dsm_loss_and_grad(net: MlpDenoiser, x0: np.ndarray, t: np.ndarray,
                      eps: np.ndarray, sched: NoiseSchedule) -> tuple[float, np.ndarray]:
    """Denoising score-matching loss and its parameter gradient.

    The loss is mean_i ||D(x0_i + sigma(t_i) eps_i, t_i) - x0_i||^2; the
    gradient is computed by hand-rolled backpropagation through the tanh
    layers and matches central finite differences.

    Args:
        net: Network parameters.
        x0: Clean batch, shape (n, d), n >= 1.
        t: Per-sample times, shape (n,), all with sigma(t) > 0.
        eps: Unit-Gaussian draws, shape (n, d).
        sched: Noise schedule.

    Returns:
        (loss, gradient) with gradient flat like net.params.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.ndim != 2 or x0.shape[0] < 1:
        raise InputError(f"x0 must be a nonempty (n, d) batch, got shape {x0.shape}")
    if t.shape != (x0.shape[0],) or eps.shape != x0.shape:
        raise ShapeError(
            f"shape mismatch: x0 {x0.shape}, t {t.shape}, eps {eps.shape}"
        )
    sigs = np.asarray([sigma(sched, float(ti)) for ti in t])
    if np.any(sigs <= 0.0):
        raise DomainError("all batch times must satisfy sigma(t) > 0")
    x_t = x0 + sigs[:, None] * eps
    out, acts = _forward_batch(net, x_t, np.log(sigs), keep=True)
    resid = out - x0
    n = x0.shape[0]
    loss = float(np.sum(resid**2) / n)

    # Backward pass: d loss / d out, then walk the layers in reverse.
    layers = _unpack(net)
    grads: list[np.ndarray] = [np.empty(0)] * (2 * len(layers))
    g = 2.0 * resid / n
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        inp = acts[i]
        grads[2 * i] = (g.T @ inp).ravel()
        grads[2 * i + 1] = g.sum(axis=0)
        if i > 0:
            g = (g @ w) * (1.0 - acts[i] ** 2)
    return loss, np.concatenate(grads)


def train(net: MlpDenoiser, gmm: GaussianMixture, steps: int, batch: int,
          lr: float, rng: Generator, sched: NoiseSchedule | None = None,
          optimizer: str = "adam") -> tuple[MlpDenoiser, np.ndarray]:
    """Train by denoising score matching with log-uniform time draws.

    Each step draws a data batch from the mixture, times log-uniform over
    [0.01 T, T], and unit noise, then applies one optimizer update.

    Args:
        net: Initial network.
        gmm: Data distribution; its dimension must match the network.
        steps: Number of gradient updates, >= 0 (0 returns net unchanged).
        batch: Samples per step, >= 1.
        lr: Learning rate.
        rng: Random stream for data, times, and noise.
        sched: Noise schedule (defaults to the standard schedule).
        optimizer: "adam" or "sgd".

    Returns:
        (trained network, loss curve of length steps).

    Raises:
        TrainingError: A step's loss exceeded 1e6.
    """
    sched = sched or NoiseSchedule()
    if gmm.dim != net.dim:
        raise ShapeError(f"mixture dimension {gmm.dim} != network dimension {net.dim}")
    if steps < 0:
        raise ConfigError(f"steps must be >= 0, got {steps}")
    if batch < 1:
        raise ConfigError(f"batch must be >= 1, got {batch}")
    t_lo, t_hi = np.log(_T_FLOOR_FRACTION * sched.horizon), np.log(sched.horizon)
    params = net.params.copy()
    state = init_optimizer(optimizer, params, lr)
    losses = np.empty(steps)
    for step in range(steps):
        current = MlpDenoiser(widths=net.widths, params=params)
        x0 = sample_data(gmm, rng, n=batch)
        t = np.exp(rng.uniform(t_lo, t_hi, size=batch))
        eps = rng.standard_normal((batch, gmm.dim))
        loss, grad = dsm_loss_and_grad(current, x0, t, eps, sched)
        if not np.isfinite(loss) or loss > _LOSS_CEILING:
            raise TrainingError(
                f"training diverged at step {step}: loss={loss:.6g}",
                last_good=current, iteration=step,
            )
        losses[step] = loss
        params = optimizer_update(state, params, grad)
    return MlpDenoiser(widths=net.widths, params=params), losses


def save_denoiser(net: MlpDenoiser, path: str) -> None:
    """Write the network as JSON: widths header plus flat parameter list."""
    payload = {
        "widths": list(net.widths),
        "activation": net.activation,
        "params": net.params.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_denoiser(path: str) -> MlpDenoiser:
    """Read a network written by save_denoiser."""
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    try:
        return MlpDenoiser(
            widths=tuple(payload["widths"]),
            params=np.asarray(payload["params"], dtype=np.float64),
            activation=payload.get("activation", "tanh"),
        )
    except KeyError as exc:
        raise InputError(f"denoiser file {path} is missing key {exc}") from exc


class MlpAdapter:
    """Callable adapter matching the shared denoiser interface.

    The MLP is unconditional, so label or guidance arguments are
    rejected rather than silently ignored.
    """

    def __init__(self, net: MlpDenoiser, sched: NoiseSchedule):
        self.net = net
        self.sched = sched

    def __call__(self, x: np.ndarray, t: float, y: int | None = None,
                 cfg_w: float | None = None) -> np.ndarray:
        if y is not None or cfg_w is not None:
            raise ConditionError("the MLP denoiser is unconditional; y/cfg_w unsupported")
        return forward(self.net, x, t, self.sched)


def as_denoiser(net: MlpDenoiser, sched: NoiseSchedule) -> MlpAdapter:
    """Bind a trained network and schedule into the denoiser interface."""
    return MlpAdapter(net, sched)


__all__ = [
    "MlpDenoiser",
    "init_mlp",
    "forward",
    "dsm_loss_and_grad",
    "train",
    "save_denoiser",
    "load_denoiser",
    "MlpAdapter",
    "as_denoiser",
]
