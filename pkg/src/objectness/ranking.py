"""Thresholding, sorting and greedy non-maximal suppression of proposals."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .scoring import Box, boxes_to_array, iou_matrix


@dataclass(frozen=True)
class ScoredProposal:
    box: Box
    score: float
    source_index: int = 0

    def __post_init__(self) -> None:
        if not math.isfinite(self.score) or self.score < 0:
            raise ValueError(f"proposal score must be finite and non-negative, got {self.score!r}")


def rank(proposals: Sequence[ScoredProposal], min_score: float = 0.0) -> list[ScoredProposal]:
    """Keep proposals scoring at least ``min_score``, best first.

    Ties fall back to ascending ``source_index`` so the order is stable.
    """
    kept = [p for p in proposals if p.score >= min_score]
    return sorted(kept, key=lambda p: (-p.score, p.source_index))


def nms(ranked: Sequence[ScoredProposal], iou_threshold: float) -> list[ScoredProposal]:
    """Greedy NMS over proposals already sorted best-first.

    A proposal survives iff its IOU with every kept proposal is strictly
    below ``iou_threshold``; at 1.0 only exact duplicates are removed.
    """
    keep = nms_indices(boxes_to_array([p.box for p in ranked]), iou_threshold)
    return [ranked[i] for i in keep]


def nms_indices(boxes: np.ndarray, iou_threshold: float) -> list[int]:
    """Index form of :func:`nms` for an ``(N, 4)`` array in ranked order."""
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must lie in (0, 1], got {iou_threshold}")
    n = len(boxes)
    if n == 0:
        return []
    overlaps = iou_matrix(boxes, boxes)
    suppressed = np.zeros(n, dtype=bool)
    keep = []
    for i in range(n):
        if suppressed[i]:
            continue
        keep.append(i)
        suppressed |= overlaps[i] >= iou_threshold
    return keep
