"""Synthetic scenes with known object boxes and a stub proposal generator."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataprep import AugmentLimits, augment_box
from .ranking import ScoredProposal
from .scoring import Box, iou

SHAPE_KINDS = ("rectangle", "ellipse", "triangle")


@dataclass(frozen=True)
class SceneSpec:
    width: int = 64
    height: int = 64
    object_count_range: tuple[int, int] = (1, 3)
    shapes: tuple[str, ...] = SHAPE_KINDS
    min_size: int = 12
    max_size: int = 32
    noise_amplitude: float = 0.08
    base_intensity: float = 0.45
    max_overlap_iou: float = 0.3
    max_retries: int = 200
    seed: int = 0

    def __post_init__(self) -> None:
        lo, hi = self.object_count_range
        if lo < 0 or hi < lo:
            raise ValueError(f"bad object_count_range {self.object_count_range}")
        if not self.shapes or any(s not in SHAPE_KINDS for s in self.shapes):
            raise ValueError(f"shapes must be drawn from {SHAPE_KINDS}")
        if not 2 <= self.min_size <= self.max_size <= min(self.width, self.height):
            raise ValueError("need 2 <= min_size <= max_size <= image side")


class PlacementError(RuntimeError):
    """Raised when objects cannot be placed within the retry budget."""


def shape_mask(kind: str, x: int, y: int, w: int, h: int, height: int, width: int,
               apex: float = 0.5) -> np.ndarray:
    """Boolean mask of a shape inscribed in the integer rectangle ``(x, y, w, h)``.

    Pixels are tested at their centres. ``apex`` places the triangle's top
    vertex as a fraction of the width.
    """
    rows = np.arange(height)[:, None] + 0.5
    cols = np.arange(width)[None, :] + 0.5
    if kind == "rectangle":
        mask = np.zeros((height, width), dtype=bool)
        mask[y : y + h, x : x + w] = True
        return mask
    if kind == "ellipse":
        cx, cy, rx, ry = x + w / 2.0, y + h / 2.0, w / 2.0, h / 2.0
        return ((cols - cx) / rx) ** 2 + ((rows - cy) / ry) ** 2 <= 1.0
    if kind == "triangle":
        # apex on the top edge, base along the bottom edge
        ax, ay = x + apex * w, float(y)
        frac = (rows - ay) / h
        inside_y = (rows >= y) & (rows <= y + h)
        left = ax - frac * (ax - x)
        right = ax + frac * (x + w - ax)
        return inside_y & (cols >= left) & (cols <= right)
    raise ValueError(f"unknown shape kind {kind!r}")


def mask_box(mask: np.ndarray) -> Box | None:
    """Tight half-open bounding box of the set pixels."""
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        return None
    return Box(float(cols[0]), float(rows[0]), float(cols[-1] - cols[0] + 1), float(rows[-1] - rows[0] + 1))


def _background(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    h, w = spec.height, spec.width
    tint = rng.uniform(-0.1, 0.1, size=3)
    gx, gy = rng.uniform(-0.1, 0.1, size=2)
    ramp = gx * (np.arange(w)[None, :] / w - 0.5) + gy * (np.arange(h)[:, None] / h - 0.5)
    noise = rng.uniform(-spec.noise_amplitude, spec.noise_amplitude, size=(h, w, 3))
    return spec.base_intensity + tint + ramp[..., None] + noise


def _object_color(rng: np.random.Generator, avoid: list[np.ndarray], background: float) -> np.ndarray:
    best, best_gap = None, -1.0
    for _ in range(32):
        c = rng.uniform(0.0, 1.0, size=3)
        gaps = [np.abs(c - background).max()] + [np.abs(c - a).max() for a in avoid]
        gap = min(gaps)
        if gap > best_gap:
            best, best_gap = c, gap
        if gap >= 0.3:
            break
    return best


def generate_scene(spec: SceneSpec, rng: np.random.Generator | None = None) -> tuple[np.ndarray, list[Box]]:
    """Render filled shapes over a noisy background.

    Returns an HxWx3 image in [0, 1] and the tight boxes of the shapes. Shapes
    never share pixels and their boxes overlap by at most
    ``spec.max_overlap_iou``.
    """
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    image = _background(spec, rng)
    lo, hi = spec.object_count_range
    count = int(rng.integers(lo, hi + 1))
    occupied = np.zeros((spec.height, spec.width), dtype=bool)
    boxes: list[Box] = []
    colors: list[np.ndarray] = []
    for _ in range(count):
        for _attempt in range(spec.max_retries):
            kind = spec.shapes[int(rng.integers(len(spec.shapes)))]
            w = int(rng.integers(spec.min_size, spec.max_size + 1))
            h = int(rng.integers(spec.min_size, spec.max_size + 1))
            x = int(rng.integers(0, spec.width - w + 1))
            y = int(rng.integers(0, spec.height - h + 1))
            mask = shape_mask(kind, x, y, w, h, spec.height, spec.width, apex=float(rng.uniform(0.2, 0.8)))
            box = mask_box(mask)
            if box is None or box.w < 2 or box.h < 2:
                continue
            # one pixel of clearance keeps neighbouring shapes separable
            grown = np.zeros_like(mask)
            grown[max(int(box.y) - 1, 0) : int(box.y2) + 1, max(int(box.x) - 1, 0) : int(box.x2) + 1] = True
            if (grown & occupied).any():
                continue
            if any(iou(box, other) > spec.max_overlap_iou for other in boxes):
                continue
            break
        else:
            raise PlacementError(f"could not place object {len(boxes) + 1} of {count} after {spec.max_retries} tries")
        color = _object_color(rng, colors, spec.base_intensity)
        image[mask] = color
        occupied |= mask
        boxes.append(box)
        colors.append(color)
    return np.clip(image, 0.0, 1.0), boxes


@dataclass(frozen=True)
class StubConfig:
    """Mixture and noise settings of the stub proposal generator."""

    jitter_fraction: float = 0.6
    max_jitter: float = 0.4
    score_noise: float = 0.25
    random_score_max: float = 0.6
    min_random_size: int = 4


def generate_proposals(
    gt_boxes: Sequence[Box],
    image_w: int,
    image_h: int,
    n: int,
    rng: np.random.Generator,
    cfg: StubConfig = StubConfig(),
) -> list[ScoredProposal]:
    """Mimic an off-the-shelf generator: jittered GT copies plus random boxes.

    A jittered proposal scores ``1 - jitter + noise``, where jitter is the
    augmentation limit it was drawn with, so the generator's order is
    informative but imperfect.
    Random boxes get a uniform low score. With ``n >= 10 * len(gt_boxes)``
    every GT gets at least one proposal with IOU >= 0.8.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    out: list[tuple[Box, float]] = []
    if len(gt_boxes) and n >= 10 * len(gt_boxes):
        for g in gt_boxes:
            while True:
                b = augment_box(g, image_w, image_h, AugmentLimits(0.04, 0.04), rng)
                if iou(b, g) >= 0.8:
                    break
            out.append((b, _jitter_score(0.04, rng, cfg)))
    while len(out) < n:
        if len(gt_boxes) and rng.random() < cfg.jitter_fraction:
            g = gt_boxes[int(rng.integers(len(gt_boxes)))]
            mag = rng.uniform(0.0, cfg.max_jitter)
            b = augment_box(g, image_w, image_h, AugmentLimits(mag, mag), rng)
            out.append((b, _jitter_score(mag, rng, cfg)))
        else:
            w = rng.uniform(cfg.min_random_size, image_w)
            h = rng.uniform(cfg.min_random_size, image_h)
            x = rng.uniform(0.0, image_w - w)
            y = rng.uniform(0.0, image_h - h)
            out.append((Box(x, y, w, h), float(rng.uniform(0.0, cfg.random_score_max))))
    order = rng.permutation(len(out))
    return [ScoredProposal(out[j][0], out[j][1], i) for i, j in enumerate(order)]


def _jitter_score(magnitude: float, rng: np.random.Generator, cfg: StubConfig) -> float:
    return float(np.clip(1.0 - magnitude + rng.normal(0.0, cfg.score_noise), 0.0, 1.0))
