"""Training-data preparation: box jitter, score-balanced sampling, k-fold splits."""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from typing import Hashable, Sequence, TypeVar

import numpy as np

from .scoring import Box

T = TypeVar("T")


@dataclass(frozen=True)
class AugmentLimits:
    max_shift_frac: float = 0.2
    max_scale_frac: float = 0.2

    def __post_init__(self) -> None:
        for v in (self.max_shift_frac, self.max_scale_frac):
            if not 0.0 <= v < 1.0:
                raise ValueError(f"augmentation limits must lie in [0, 1), got {v}")


@dataclass(frozen=True)
class SampleSpec:
    target: int
    bin_count: int = 10

    def __post_init__(self) -> None:
        if self.bin_count < 1:
            raise ValueError("bin_count must be at least 1")
        if self.target < 0:
            raise ValueError("target must be non-negative")


def image_rng(global_seed: int, image_id: str) -> np.random.Generator:
    """Independent per-image generator keyed on ``(global_seed, image_id)``."""
    return np.random.default_rng([global_seed, zlib.crc32(image_id.encode("utf-8"))])


def augment_box(
    b: Box, image_w: float, image_h: float, limits: AugmentLimits, rng: np.random.Generator
) -> Box:
    """Rescale then shift ``b`` per axis, then translate it back inside the image.

    Shifts are relative to the rescaled size. A box that outgrows the image is
    shrunk to the image extent on that axis.
    """
    if image_w <= 0 or image_h <= 0:
        raise ValueError("image dimensions must be positive")
    eps = 1e-9
    if b.x < -eps or b.y < -eps or b.x2 > image_w + eps or b.y2 > image_h + eps:
        raise ValueError(f"box {b} lies outside the {image_w}x{image_h} image")
    sx, sy = rng.uniform(1.0 - limits.max_scale_frac, 1.0 + limits.max_scale_frac, size=2)
    w, h = b.w * sx, b.h * sy
    dx, dy = rng.uniform(-limits.max_shift_frac, limits.max_shift_frac, size=2)
    # keep the box centre fixed under scaling, then translate
    x = b.x + (b.w - w) / 2.0 + dx * w
    y = b.y + (b.h - h) / 2.0 + dy * h
    x, w = _fit_axis(x, w, image_w)
    y, h = _fit_axis(y, h, image_h)
    return Box(x, y, w, h)


def _fit_axis(start: float, size: float, limit: float) -> tuple[float, float]:
    size = min(size, limit)
    start = min(max(start, 0.0), limit - size)
    return start, size


def _bin_index(score: float, bin_count: int) -> int:
    return min(int(score * bin_count), bin_count - 1)


def balanced_sample(
    scored: Sequence[tuple[T, float]], spec: SampleSpec, rng: np.random.Generator
) -> list[tuple[T, float]]:
    """Draw up to ``spec.target`` items spread evenly over score bins.

    Each non-empty bin first contributes ``ceil(target / bin_count)`` items (or
    all it has). Any shortfall is refilled one item at a time, round-robin over
    bins with supply left, largest remaining supply first. If the quotas
    overshoot the target, the fullest bins give items back first.
    """
    target = min(spec.target, len(scored))
    if target == 0:
        return []
    bins: list[list[int]] = [[] for _ in range(spec.bin_count)]
    for i, (_, s) in enumerate(scored):
        if not 0.0 <= s <= 1.0:
            raise ValueError(f"gt score {s} outside [0, 1]")
        bins[_bin_index(s, spec.bin_count)].append(i)
    # shuffled per-bin orders; quota picks and refills both read from these
    pools = [list(rng.permutation(b)) if b else [] for b in bins]
    quota = math.ceil(spec.target / spec.bin_count)
    takes = [min(quota, len(pool)) for pool in pools]
    # quotas can overshoot the target; trim the fullest bins first
    tie_order = rng.permutation(spec.bin_count)
    while sum(takes) > target:
        b = max(tie_order, key=lambda i: takes[i])
        takes[b] -= 1
    chosen: list[int] = []
    for pool, take in zip(pools, takes):
        chosen.extend(pool[:take])
        del pool[:take]
    while len(chosen) < target:
        order = sorted((b for b in range(spec.bin_count) if pools[b]), key=lambda b: (-len(pools[b]), b))
        for b in order:
            if len(chosen) == target:
                break
            chosen.append(pools[b].pop(0))
    return [scored[i] for i in chosen]


def kfold_split(image_ids: Sequence[Hashable], k: int, rng: np.random.Generator) -> list[list]:
    """Shuffle ids into ``k`` disjoint folds whose sizes differ by at most one."""
    if k < 2:
        raise ValueError("k must be at least 2")
    if len(image_ids) < k:
        raise ValueError(f"need at least {k} ids for {k} folds, got {len(image_ids)}")
    order = rng.permutation(len(image_ids))
    return [[image_ids[i] for i in order[f::k]] for f in range(k)]
