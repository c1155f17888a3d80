"""Flat-parameter optimizers used by the distillation loops.

Both optimizers operate on a single 1-d float64 parameter vector. State is
an explicit dict so runs can be checkpointed and resumed without hidden
module state.
"""

import numpy as np

from cdslab.errors import ConfigError, NumericalError, ShapeError

_ADAM_DEFAULTS = {"beta1": 0.9, "beta2": 0.999, "eps": 1e-8}


def init_optimizer(kind: str, theta: np.ndarray, lr: float, **hyper) -> dict:
    """Build optimizer state for a flat parameter vector.

    Args:
        kind: "adam" or "sgd".
        theta: Initial parameters, shape (p,).
        lr: Learning rate, > 0.
        **hyper: Optional overrides (adam: beta1, beta2, eps).

    Returns:
        Mutable state dict; pass it to optimizer_update.
    """
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim != 1:
        raise ShapeError(f"theta must be 1-d, got shape {theta.shape}")
    if not lr > 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    if kind == "adam":
        cfg = dict(_ADAM_DEFAULTS)
        unknown = set(hyper) - set(cfg)
        if unknown:
            raise ConfigError(f"unknown adam hyperparameters: {sorted(unknown)}")
        cfg.update(hyper)
        if not 0.0 <= cfg["beta1"] < 1.0 or not 0.0 <= cfg["beta2"] < 1.0:
            raise ConfigError("adam betas must lie in [0, 1)")
        return {
            "kind": "adam",
            "lr": float(lr),
            "step": 0,
            "m": np.zeros_like(theta),
            "v": np.zeros_like(theta),
            **{k: float(v) for k, v in cfg.items()},
        }
    if kind == "sgd":
        if hyper:
            raise ConfigError(f"sgd takes no hyperparameters, got {sorted(hyper)}")
        return {"kind": "sgd", "lr": float(lr), "step": 0}
    raise ConfigError(f"unknown optimizer kind {kind!r}, expected 'adam' or 'sgd'")


def optimizer_update(state: dict, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Apply one optimizer step and return the new parameters.

    Args:
        state: State dict from init_optimizer; mutated in place.
        theta: Current parameters, shape (p,).
        grad: Gradient at theta, shape (p,), must be finite.

    Returns:
        Updated parameter vector (new array; theta is not mutated).
    """
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if theta.shape != grad.shape or theta.ndim != 1:
        raise ShapeError(f"theta {theta.shape} and grad {grad.shape} must be matching 1-d")
    if not np.all(np.isfinite(grad)):
        raise NumericalError("non-finite gradient passed to optimizer_update")
    state["step"] += 1
    if state["kind"] == "sgd":
        return theta - state["lr"] * grad
    # Adam with bias correction.
    b1, b2 = state["beta1"], state["beta2"]
    state["m"] = b1 * state["m"] + (1.0 - b1) * grad
    state["v"] = b2 * state["v"] + (1.0 - b2) * grad**2
    t = state["step"]
    m_hat = state["m"] / (1.0 - b1**t)
    v_hat = state["v"] / (1.0 - b2**t)
    return theta - state["lr"] * m_hat / (np.sqrt(v_hat) + state["eps"])


__all__ = ["init_optimizer", "optimizer_update"]
