"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable

import numpy as np


def numeric_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, epsilon: float = 1e-5) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + epsilon
        f_plus = f(x)
        x[idx] = orig - epsilon
        f_minus = f(x)
        x[idx] = orig
        grad[idx] = (f_plus - f_minus) / (2 * epsilon)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-5) -> float:
    """Max of ``|a - n| / max(|a|, |n|, floor)``.

    The floor keeps round-off in central differences (around 1e-11 for O(1)
    losses) from swamping entries whose true gradient is essentially zero.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def finite_diff_check(
    func: Callable[[np.ndarray], tuple[float, np.ndarray]], x: np.ndarray, epsilon: float = 1e-5, floor: float = 1e-5
) -> float:
    """Max relative error between ``func``'s analytic gradient and central differences.

    ``func(x)`` must return ``(value, gradient_wrt_x)`` and must not keep
    state between calls that changes its value.
    """
    x = np.array(x, dtype=np.float64)
    _, analytic = func(x.copy())
    numeric = numeric_gradient(lambda v: func(v)[0], x, epsilon)
    return relative_error(analytic, numeric, floor)
