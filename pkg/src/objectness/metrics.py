"""Precision, recall and mean ground-truth score as functions of top-k.

Counts are pooled over images. A proposal is "detected" when it reaches the
IOU threshold with any ground-truth box, and a ground-truth box is covered
when any top-k proposal reaches the threshold against it. Matching is
many-to-one both ways, with no one-to-one assignment.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Sequence, Union

import numpy as np

from .scoring import Box, ScoringConfig, boxes_to_array, gt_scores_array, iou_matrix

# one image: (proposal boxes best-first, ground-truth boxes)
ImageEval = tuple[Sequence[Box], Sequence[Box]]

CSV_HEADER = ["k", "precision", "recall", "mean_gt_score"]


@dataclass
class EvalCurves:
    k_max: int
    precision: np.ndarray
    recall: np.ndarray
    mean_gt_score: np.ndarray

    @property
    def auc_precision(self) -> float:
        return float(np.mean(self.precision))

    @property
    def auc_recall(self) -> float:
        return float(np.mean(self.recall))

    @property
    def auc_mean_score(self) -> float:
        return float(np.mean(self.mean_gt_score))

    def truncated(self, k: int) -> "EvalCurves":
        return EvalCurves(k, self.precision[:k].copy(), self.recall[:k].copy(), self.mean_gt_score[:k].copy())


def match_detected(
    proposals_topk: Sequence[Box], gts: Sequence[Box], iou_threshold: float = 0.7
) -> tuple[list[bool], list[bool]]:
    """Flag proposals that hit some GT and GTs hit by some proposal."""
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must lie in (0, 1], got {iou_threshold}")
    hits = iou_matrix(boxes_to_array(proposals_topk), boxes_to_array(gts)) >= iou_threshold
    return hits.any(axis=1).tolist(), hits.any(axis=0).tolist()


def evaluate(
    dataset: Sequence[ImageEval],
    k_max: int = 50,
    iou_threshold: float = 0.7,
    cfg: ScoringConfig = ScoringConfig(),
) -> EvalCurves:
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must lie in (0, 1], got {iou_threshold}")
    total_gt = sum(len(gts) for _, gts in dataset)
    if total_gt == 0:
        raise ValueError("dataset has no ground-truth boxes; recall is undefined")

    detected = np.zeros(k_max)
    available = np.zeros(k_max)
    covered = np.zeros(k_max)
    score_sum = np.zeros(k_max)
    ks = np.arange(1, k_max + 1)

    for proposals, gts in dataset:
        props = boxes_to_array(list(proposals)[:k_max])
        gt_arr = boxes_to_array(list(gts))
        n = len(props)
        available += np.minimum(ks, n)
        if n == 0:
            continue
        hits = iou_matrix(props, gt_arr) >= iou_threshold
        # pad per-rank tallies so ranks past n repeat the final value
        det_cum = np.cumsum(hits.any(axis=1))
        detected += det_cum[np.minimum(ks, n) - 1]
        score_cum = np.cumsum(gt_scores_array(props, gt_arr, cfg))
        score_sum += score_cum[np.minimum(ks, n) - 1]
        if len(gt_arr):
            any_hit = hits.any(axis=0)
            first_rank = np.where(any_hit, hits.argmax(axis=0) + 1, k_max + 1)
            covered += (first_rank[None, :] <= ks[:, None]).sum(axis=1)

    precision = np.zeros(k_max)
    mean_score = np.zeros(k_max)
    np.divide(detected, available, out=precision, where=available > 0)
    np.divide(score_sum, available, out=mean_score, where=available > 0)
    return EvalCurves(k_max, precision, covered / total_gt, mean_score)


def write_report(curves: EvalCurves, destination: Union[str, Path, IO[str]]) -> None:
    """Write curves as CSV with a trailing ``auc`` row."""
    if isinstance(destination, (str, Path)):
        with open(destination, "w", newline="") as fh:
            _write_rows(curves, fh)
    else:
        _write_rows(curves, destination)


def _write_rows(curves: EvalCurves, fh: IO[str]) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for k in range(curves.k_max):
        writer.writerow(
            [k + 1, f"{curves.precision[k]:.6f}", f"{curves.recall[k]:.6f}", f"{curves.mean_gt_score[k]:.6f}"]
        )
    writer.writerow(
        ["auc", f"{curves.auc_precision:.6f}", f"{curves.auc_recall:.6f}", f"{curves.auc_mean_score:.6f}"]
    )


def read_report(source: Union[str, Path, IO[str]]) -> tuple[EvalCurves, tuple[float, float, float]]:
    """Parse a report written by :func:`write_report`; returns curves and the AUC row."""
    text = Path(source).read_text() if isinstance(source, (str, Path)) else source.read()
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != CSV_HEADER:
        raise ValueError("not a metrics report: bad header")
    body = [r for r in rows[1:] if r and r[0] != "auc"]
    auc_rows = [r for r in rows[1:] if r and r[0] == "auc"]
    if len(auc_rows) != 1:
        raise ValueError("metrics report must have exactly one auc row")
    values = np.array([[float(v) for v in r[1:4]] for r in body]).reshape(-1, 3)
    curves = EvalCurves(len(body), values[:, 0], values[:, 1], values[:, 2])
    auc = tuple(float(v) for v in auc_rows[0][1:4])
    return curves, auc  # type: ignore[return-value]
