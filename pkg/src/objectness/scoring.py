"""Box geometry and ground-truth objectness scores.

A proposal is scored against a ground-truth box through two overlap indices:
completeness (how much of the object the proposal covers) and fullness (how
much of the proposal the object fills). Each index goes through its own
transfer function and the two scores are blended with a weight ``w``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class Box:
    """Axis-aligned box ``(x, y, w, h)`` covering ``[x, x+w) x [y, y+h)``."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        for name in ("x", "y", "w", "h"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"box {name} must be finite, got {getattr(self, name)!r}")
        if self.w < 0 or self.h < 0:
            raise ValueError(f"box size must be non-negative, got w={self.w}, h={self.h}")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    @classmethod
    def from_corners(cls, x1: float, y1: float, x2: float, y2: float) -> "Box":
        return cls(x1, y1, x2 - x1, y2 - y1)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)


@dataclass(frozen=True)
class ScoringConfig:
    """Transfer-function parameters and the completeness weight.

    ``linear=True`` swaps both transfer functions for the identity, giving
    ``w * c_c + (1 - w) * c_f``.
    """

    alpha: float = 0.5
    beta: float = 12.0
    gamma: float = 0.6
    q: float = 1.0
    w: float = 0.4
    linear: bool = False

    def __post_init__(self) -> None:
        if self.gamma <= 0 or self.q <= 0:
            raise ValueError("gamma and q must be positive")
        if not 0.0 <= self.w <= 1.0:
            raise ValueError(f"w must lie in [0, 1], got {self.w}")


@dataclass(frozen=True)
class ScoreBreakdown:
    c_c: float
    c_f: float
    s_c: float
    s_f: float
    s_final: float


class InvalidGroundTruth(ValueError):
    """Raised when a ground-truth box has zero area."""


def intersection_area(a: Box, b: Box) -> float:
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    return iw * ih


def iou(a: Box, b: Box) -> float:
    """Intersection over union; 0 when both boxes have zero area."""
    inter = intersection_area(a, b)
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    # edge arithmetic can round the ratio a hair past 1
    return min(inter / union, 1.0)


def fullness_score(c_f: float, cfg: ScoringConfig = ScoringConfig()) -> float:
    """Generalized logistic transfer applied to the fullness index."""
    if cfg.linear:
        return c_f
    return (1.0 + cfg.q * math.exp(-cfg.beta * (c_f - cfg.alpha))) ** (-1.0 / cfg.gamma)


def completeness_score(c_c: float, cfg: ScoringConfig = ScoringConfig()) -> float:
    if cfg.linear:
        return c_c
    return c_c * c_c


def score_components(p: Box, g: Box, cfg: ScoringConfig = ScoringConfig()) -> ScoreBreakdown:
    if g.area <= 0:
        raise InvalidGroundTruth(f"ground-truth box {g} has zero area")
    inter = intersection_area(p, g)
    c_c = min(inter / g.area, 1.0)
    # zero-area proposals rank last rather than raising
    c_f = min(inter / p.area, 1.0) if p.area > 0 else 0.0
    s_c = completeness_score(c_c, cfg)
    s_f = fullness_score(c_f, cfg)
    s_final = cfg.w * s_c + (1.0 - cfg.w) * s_f
    return ScoreBreakdown(c_c=c_c, c_f=c_f, s_c=s_c, s_f=s_f, s_final=s_final)


def objectness_gt_score(p: Box, gts: Iterable[Box], cfg: ScoringConfig = ScoringConfig()) -> float:
    """Best final score of ``p`` over all ground-truth boxes (0 for none)."""
    best = 0.0
    for g in gts:
        best = max(best, score_components(p, g, cfg).s_final)
    return best


def boxes_to_array(boxes: Sequence[Box]) -> np.ndarray:
    """Stack boxes into an ``(N, 4)`` float array of ``x, y, w, h``."""
    if len(boxes) == 0:
        return np.zeros((0, 4))
    return np.array([b.as_tuple() for b in boxes], dtype=np.float64)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IOU between ``(N, 4)`` and ``(M, 4)`` xywh arrays."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    ax1, ay1 = a[:, 0:1], a[:, 1:2]
    ax2, ay2 = ax1 + a[:, 2:3], ay1 + a[:, 3:4]
    bx1, by1 = b[:, 0], b[:, 1]
    bx2, by2 = bx1 + b[:, 2], by1 + b[:, 3]
    iw = np.clip(np.minimum(ax2, bx2) - np.maximum(ax1, bx1), 0.0, None)
    ih = np.clip(np.minimum(ay2, by2) - np.maximum(ay1, by1), 0.0, None)
    inter = iw * ih
    union = (a[:, 2] * a[:, 3])[:, None] + (b[:, 2] * b[:, 3])[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return np.minimum(out, 1.0, out=out)


def gt_scores_array(proposals: np.ndarray, gts: np.ndarray, cfg: ScoringConfig = ScoringConfig()) -> np.ndarray:
    """Vectorized :func:`objectness_gt_score` for an ``(N, 4)`` proposal array."""
    proposals = np.asarray(proposals, dtype=np.float64).reshape(-1, 4)
    gts = np.asarray(gts, dtype=np.float64).reshape(-1, 4)
    if len(gts) == 0:
        return np.zeros(len(proposals))
    g_area = gts[:, 2] * gts[:, 3]
    if np.any(g_area <= 0):
        raise InvalidGroundTruth("ground-truth box has zero area")
    px1, py1 = proposals[:, 0:1], proposals[:, 1:2]
    px2, py2 = px1 + proposals[:, 2:3], py1 + proposals[:, 3:4]
    iw = np.clip(np.minimum(px2, gts[:, 0] + gts[:, 2]) - np.maximum(px1, gts[:, 0]), 0.0, None)
    ih = np.clip(np.minimum(py2, gts[:, 1] + gts[:, 3]) - np.maximum(py1, gts[:, 1]), 0.0, None)
    inter = iw * ih
    p_area = (proposals[:, 2] * proposals[:, 3])[:, None]
    c_c = np.minimum(inter / g_area[None, :], 1.0)
    c_f = np.zeros_like(inter)
    np.divide(inter, p_area, out=c_f, where=p_area > 0)
    np.minimum(c_f, 1.0, out=c_f)
    if cfg.linear:
        s_c, s_f = c_c, c_f
    else:
        s_c = c_c * c_c
        s_f = (1.0 + cfg.q * np.exp(-cfg.beta * (c_f - cfg.alpha))) ** (-1.0 / cfg.gamma)
    return (cfg.w * s_c + (1.0 - cfg.w) * s_f).max(axis=1)
