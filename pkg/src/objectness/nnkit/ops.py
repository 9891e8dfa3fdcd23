"""Forward/backward kernels on single-image HxWxC arrays and flat vectors.

Every ``*_forward`` returns ``(output, cache)`` and the matching
``*_backward`` consumes the upstream gradient plus that cache.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..scoring import Box


def _check_hwc(x: np.ndarray, name: str = "input") -> None:
    if x.ndim != 3:
        raise ValueError(f"{name} must be HxWxC, got shape {x.shape}")


# -- convolution ---------------------------------------------------------------


def conv2d_forward(x: np.ndarray, kernels: np.ndarray, pad: int = 0, stride: int = 1):
    _check_hwc(x)
    if kernels.ndim != 4 or kernels.shape[0] != kernels.shape[1]:
        raise ValueError(f"kernels must be kxkxCxF, got shape {kernels.shape}")
    k, _, c_in, f = kernels.shape
    if k % 2 == 0:
        raise ValueError(f"kernel size must be odd, got {k}")
    if c_in != x.shape[2]:
        raise ValueError(f"kernel expects {c_in} channels, input has {x.shape[2]}")
    if stride < 1 or pad < 0:
        raise ValueError("stride must be >= 1 and pad >= 0")
    xp = np.pad(x, ((pad, pad), (pad, pad), (0, 0))) if pad else x
    if xp.shape[0] < k or xp.shape[1] < k:
        raise ValueError(f"kernel {k} larger than padded input {xp.shape[:2]}")
    win = sliding_window_view(xp, (k, k), axis=(0, 1))[::stride, ::stride]
    ho, wo = win.shape[:2]
    cols = win.transpose(0, 1, 3, 4, 2).reshape(ho * wo, k * k * c_in)
    out = (cols @ kernels.reshape(k * k * c_in, f)).reshape(ho, wo, f)
    return out, (cols, xp.shape, x.shape, kernels, pad, stride)


def conv2d_backward(dout: np.ndarray, cache):
    cols, xp_shape, x_shape, kernels, pad, stride = cache
    k, _, c_in, f = kernels.shape
    ho, wo = dout.shape[:2]
    d2 = dout.reshape(ho * wo, f)
    dk = (cols.T @ d2).reshape(kernels.shape)
    dcols = (d2 @ kernels.reshape(k * k * c_in, f).T).reshape(ho, wo, k, k, c_in)
    dxp = np.zeros(xp_shape)
    for i in range(k):
        for j in range(k):
            dxp[i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[:, :, i, j]
    dx = dxp[pad : pad + x_shape[0], pad : pad + x_shape[1]] if pad else dxp
    return dx, dk


def conv2d(x: np.ndarray, kernels: np.ndarray, pad: int = 0, stride: int = 1) -> np.ndarray:
    """Zero-padded cross-correlation of an HxWxC input with kxkxCxF kernels."""
    return conv2d_forward(x, kernels, pad, stride)[0]


# -- max pooling ---------------------------------------------------------------


def max_pool_forward(x: np.ndarray, window: int, stride: int):
    _check_hwc(x)
    h, w, c = x.shape
    if window < 1 or stride < 1:
        raise ValueError("window and stride must be positive")
    if window > h or window > w:
        raise ValueError(f"pool window {window} exceeds input {h}x{w}")
    win = sliding_window_view(x, (window, window), axis=(0, 1))[::stride, ::stride]
    ho, wo = win.shape[:2]
    flat = win.reshape(ho, wo, c, window * window)
    arg = flat.argmax(axis=3)  # first occurrence, row-major inside the window
    out = np.take_along_axis(flat, arg[..., None], axis=3)[..., 0]
    return out, (x.shape, arg, window, stride)


def max_pool_backward(dout: np.ndarray, cache) -> np.ndarray:
    x_shape, arg, window, stride = cache
    ho, wo, c = arg.shape
    ii, jj, cc = np.meshgrid(np.arange(ho), np.arange(wo), np.arange(c), indexing="ij")
    rows = ii * stride + arg // window
    cols = jj * stride + arg % window
    dx = np.zeros(x_shape)
    np.add.at(dx, (rows, cols, cc), dout)
    return dx


def max_pool(x: np.ndarray, window: int, stride: int) -> np.ndarray:
    return max_pool_forward(x, window, stride)[0]


# -- ROI pooling ---------------------------------------------------------------


def roi_cells(
    box: Box | tuple, spatial_scale: float, grid: int, height: int, width: int
) -> tuple[list[tuple[int, int]], list[tuple[int, int]]]:
    """Row and column spans of each grid cell for one box on an HxW map.

    The box is projected by ``spatial_scale``, snapped outward to whole
    cells (floor on the min edge, ceil on the max edge) and clamped to the map.
    Every grid cell spans at least one feature cell.
    """
    if grid < 1:
        raise ValueError("grid must be at least 1")
    x, y, w, h = box.as_tuple() if isinstance(box, Box) else box
    if w <= 0 or h <= 0:
        raise ValueError(f"ROI {box} has no area")
    c0 = max(math.floor(x * spatial_scale), 0)
    c1 = min(math.ceil((x + w) * spatial_scale), width)
    r0 = max(math.floor(y * spatial_scale), 0)
    r1 = min(math.ceil((y + h) * spatial_scale), height)
    if c1 <= c0 or r1 <= r0:
        raise ValueError(f"ROI {box} projects outside the {height}x{width} feature map")
    return _spans(r0, r1 - r0, grid), _spans(c0, c1 - c0, grid)


def _spans(start: int, size: int, grid: int) -> list[tuple[int, int]]:
    spans = []
    for i in range(grid):
        lo = (i * size) // grid
        hi = max(lo + 1, -((-(i + 1) * size) // grid))
        spans.append((start + lo, start + hi))
    return spans


def roi_pool_forward(featmap: np.ndarray, box, spatial_scale: float, grid: int):
    _check_hwc(featmap, "feature map")
    h, w, c = featmap.shape
    rows, cols = roi_cells(box, spatial_scale, grid, h, w)
    out = np.empty((grid, grid, c))
    arg = np.empty((grid, grid, c), dtype=np.int64)
    for i, (ra, rb) in enumerate(rows):
        for j, (ca, cb) in enumerate(cols):
            cell = featmap[ra:rb, ca:cb].reshape(-1, c)
            local = cell.argmax(axis=0)
            out[i, j] = cell[local, np.arange(c)]
            cw = cb - ca
            arg[i, j] = (ra + local // cw) * w + (ca + local % cw)
    return out, (featmap.shape, arg)


def roi_pool_backward(dout: np.ndarray, cache) -> np.ndarray:
    shape, arg = cache
    h, w, c = shape
    dx = np.zeros(h * w * c)
    flat = arg * c + np.arange(c)
    np.add.at(dx, flat.ravel(), dout.ravel())
    return dx.reshape(shape)


def roi_pool(featmap: np.ndarray, box, spatial_scale: float = 1.0, grid: int = 7) -> np.ndarray:
    """Max-pool the projected box region into a fixed ``grid x grid x C`` block."""
    return roi_pool_forward(featmap, box, spatial_scale, grid)[0]


def roi_pool_many(featmap: np.ndarray, boxes: np.ndarray, spatial_scale: float, grid: int) -> np.ndarray:
    """Forward-only ROI pooling for an ``(N, 4)`` box array -> ``(N, G, G, C)``."""
    _check_hwc(featmap, "feature map")
    h, w, c = featmap.shape
    out = np.empty((len(boxes), grid, grid, c))
    for n, b in enumerate(np.asarray(boxes, dtype=np.float64).reshape(-1, 4)):
        rows, cols = roi_cells(tuple(b), spatial_scale, grid, h, w)
        for i, (ra, rb) in enumerate(rows):
            band = featmap[ra:rb]
            for j, (ca, cb) in enumerate(cols):
                out[n, i, j] = band[:, ca:cb].max(axis=(0, 1))
    return out


# -- dense layers --------------------------------------------------------------


def fully_connected(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """``weights @ x + bias`` for a length-N input and MxN weights."""
    if weights.ndim != 2 or x.shape[-1] != weights.shape[1] or bias.shape != (weights.shape[0],):
        raise ValueError(f"shape mismatch: x {x.shape}, weights {weights.shape}, bias {bias.shape}")
    return x @ weights.T + bias


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(dout: np.ndarray, x: np.ndarray) -> np.ndarray:
    return dout * (x > 0)


def batch_norm_forward(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-5):
    """Training-mode batch norm over axis 0 using the population variance."""
    if x.shape[0] < 2:
        raise ValueError("batch norm needs a batch of at least 2 in training mode")
    mean = x.mean(axis=0)
    var = x.var(axis=0)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv_std
    return gamma * xhat + beta, (xhat, inv_std, gamma), mean, var


def batch_norm_backward(dout: np.ndarray, cache):
    xhat, inv_std, gamma = cache
    n = dout.shape[0]
    dgamma = (dout * xhat).sum(axis=0)
    dbeta = dout.sum(axis=0)
    dxhat = dout * gamma
    dx = inv_std / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
    return dx, dgamma, dbeta


def dropout_mask(shape: tuple, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout mask; all zeros when ``rate`` is 1."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1], got {rate}")
    if rate == 1.0:
        return np.zeros(shape)
    return (rng.random(shape) >= rate) / (1.0 - rate)


def dropout(x: np.ndarray, rate: float, training: bool, rng: np.random.Generator | None = None) -> np.ndarray:
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    return x * dropout_mask(x.shape, rate, rng)
