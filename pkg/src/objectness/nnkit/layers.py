"""Stateful layers holding parameters, gradient slots and momentum buffers."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import ops


class Layer:
    """Base layer. ``params``, ``grads`` and ``velocity`` share keys and shapes."""

    def __init__(self) -> None:
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.velocity: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.training = True

    def add_param(self, name: str, value: np.ndarray) -> None:
        self.params[name] = np.asarray(value, dtype=np.float64)
        self.grads[name] = np.zeros_like(self.params[name])
        self.velocity[name] = np.zeros_like(self.params[name])

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class Conv2D(Layer):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, rng: np.random.Generator,
                 pad: int | None = None, stride: int = 1) -> None:
        super().__init__()
        self.pad = (kernel_size - 1) // 2 if pad is None else pad
        self.stride = stride
        fan_in = kernel_size * kernel_size * in_channels
        self.add_param("weight", rng.normal(0.0, np.sqrt(2.0 / fan_in),
                                            (kernel_size, kernel_size, in_channels, out_channels)))
        self.add_param("bias", np.zeros(out_channels))
        self._cache = None

    def forward(self, x):
        out, self._cache = ops.conv2d_forward(x, self.params["weight"], self.pad, self.stride)
        return out + self.params["bias"]

    def backward(self, dout):
        dx, dw = ops.conv2d_backward(dout, self._cache)
        self.grads["weight"] += dw
        self.grads["bias"] += dout.sum(axis=(0, 1))
        return dx


class MaxPool2D(Layer):
    def __init__(self, window: int = 2, stride: int = 2) -> None:
        super().__init__()
        self.window, self.stride = window, stride
        self._cache = None

    def forward(self, x):
        out, self._cache = ops.max_pool_forward(x, self.window, self.stride)
        return out

    def backward(self, dout):
        return ops.max_pool_backward(dout, self._cache)


class Linear(Layer):
    """Batched fully connected layer on ``(B, N)`` inputs with ``(M, N)`` weights."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator) -> None:
        super().__init__()
        self.add_param("weight", rng.normal(0.0, np.sqrt(2.0 / in_features), (out_features, in_features)))
        self.add_param("bias", np.zeros(out_features))
        self._x = None

    def forward(self, x):
        self._x = x
        return ops.fully_connected(x, self.params["weight"], self.params["bias"])

    def backward(self, dout):
        self.grads["weight"] += dout.T @ self._x
        self.grads["bias"] += dout.sum(axis=0)
        return dout @ self.params["weight"]


class ReLU(Layer):
    def forward(self, x):
        self._x = x
        return ops.relu(x)

    def backward(self, dout):
        return ops.relu_backward(dout, self._x)


class BatchNorm(Layer):
    def __init__(self, features: int, eps: float = 1e-5, momentum: float = 0.9) -> None:
        super().__init__()
        self.eps, self.momentum = eps, momentum
        self.add_param("gamma", np.ones(features))
        self.add_param("beta", np.zeros(features))
        self.buffers["running_mean"] = np.zeros(features)
        self.buffers["running_var"] = np.ones(features)
        self._cache = None

    def forward(self, x):
        if self.training:
            out, cache, mean, var = ops.batch_norm_forward(x, self.params["gamma"], self.params["beta"], self.eps)
            self._cache = ("train", cache)
            m = self.momentum
            self.buffers["running_mean"] = m * self.buffers["running_mean"] + (1 - m) * mean
            self.buffers["running_var"] = m * self.buffers["running_var"] + (1 - m) * var
            return out
        inv_std = 1.0 / np.sqrt(self.buffers["running_var"] + self.eps)
        xhat = (x - self.buffers["running_mean"]) * inv_std
        self._cache = ("eval", xhat, inv_std)
        return self.params["gamma"] * xhat + self.params["beta"]

    def backward(self, dout):
        if self._cache[0] == "eval":
            # inference mode is a fixed affine map
            _, xhat, inv_std = self._cache
            self.grads["gamma"] += (dout * xhat).sum(axis=0)
            self.grads["beta"] += dout.sum(axis=0)
            return dout * self.params["gamma"] * inv_std
        dx, dgamma, dbeta = ops.batch_norm_backward(dout, self._cache[1])
        self.grads["gamma"] += dgamma
        self.grads["beta"] += dbeta
        return dx


class Dropout(Layer):
    def __init__(self, rate: float, rng: np.random.Generator) -> None:
        super().__init__()
        self.rate = rate
        self.rng = rng
        self._mask = None

    def forward(self, x):
        if not self.training or self.rate == 0.0:
            self._mask = None
            return x
        self._mask = ops.dropout_mask(x.shape, self.rate, self.rng)
        return x * self._mask

    def backward(self, dout):
        return dout if self._mask is None else dout * self._mask


class Sequential(Layer):
    def __init__(self, layers: Sequence[Layer]) -> None:
        super().__init__()
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout

    def set_training(self, flag: bool) -> None:
        for layer in self.layers:
            layer.training = flag

    def zero_grad(self) -> None:
        for layer in self.layers:
            layer.zero_grad()


