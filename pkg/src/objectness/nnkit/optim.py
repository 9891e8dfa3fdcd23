"""Regression loss and the momentum SGD update."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .layers import Layer


def mse_loss(predicted, target) -> tuple[float, np.ndarray]:
    """Half mean squared error ``sum((p - t)^2) / 2N`` and its gradient ``(p - t) / N``."""
    p = np.asarray(predicted, dtype=np.float64).ravel()
    t = np.asarray(target, dtype=np.float64).ravel()
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.size} predictions vs {t.size} targets")
    if p.size == 0:
        raise ValueError("mse_loss needs at least one prediction")
    diff = p - t
    return float(diff @ diff) / (2 * p.size), diff / p.size


def sgd_momentum_step(layers: Iterable[Layer], lr: float, momentum: float, weight_decay: float) -> None:
    """``v <- momentum*v - lr*(g + weight_decay*w)``, then ``w <- w + v``, in place."""
    for layer in layers:
        for name, w in layer.params.items():
            v = layer.velocity[name]
            v *= momentum
            v -= lr * (layer.grads[name] + weight_decay * w)
            w += v
