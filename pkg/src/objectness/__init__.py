"""Objectness assessment for object proposals: scoring, re-ranking, NMS and evaluation."""

from .metrics import EvalCurves, evaluate, match_detected
from .ranking import ScoredProposal, nms, rank
from .scoring import Box, ScoreBreakdown, ScoringConfig, intersection_area, iou, objectness_gt_score, score_components

__all__ = [
    "Box",
    "EvalCurves",
    "ScoreBreakdown",
    "ScoredProposal",
    "ScoringConfig",
    "evaluate",
    "intersection_area",
    "iou",
    "match_detected",
    "nms",
    "objectness_gt_score",
    "rank",
    "score_components",
]

__version__ = "0.1.0"
