"""End-to-end drivers: dataset I/O, training-data prep, training, evaluation,
the completeness-weight sweep and the harvest pipeline.

On-disk dataset layout::

    <dir>/images/<image_id>.ppm   (or .pgm)
    <dir>/annotations.jsonl       {"image", "boxes": [{x, y, w, h}, ...]}
    <dir>/proposals.jsonl         {"image", "x", "y", "w", "h", "score"}
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import model as M
from .dataprep import AugmentLimits, SampleSpec, augment_box, balanced_sample, image_rng, kfold_split
from .ingest import (
    AnnotationRecord,
    ObjectRecord,
    ProposalRecord,
    read_jsonl,
    read_pnm,
    write_jsonl,
    write_pnm,
)
from .metrics import EvalCurves, evaluate
from .ranking import ScoredProposal, nms, rank
from .scoring import Box, ScoringConfig, boxes_to_array, gt_scores_array
from .synth import SceneSpec, StubConfig, generate_proposals, generate_scene

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".ppm", ".pgm", ".pnm")


@dataclass
class SceneRecord:
    image_id: str
    image: np.ndarray
    gt_boxes: list[Box]
    proposals: list[ScoredProposal] = field(default_factory=list)


# -- datasets ----------------------------------------------------------------------


def synthesize(
    count: int,
    seed: int = 0,
    spec: SceneSpec = SceneSpec(),
    stub: StubConfig = StubConfig(),
    n_proposals: int = 100,
    prefix: str = "scene",
    start: int = 0,
) -> list[SceneRecord]:
    """Generate scenes with stub proposals. Pixels are quantized to 8 bits so
    records match what :func:`save_dataset` writes."""
    records = []
    width = len(str(start + count - 1)) if count else 1
    for i in range(start, start + count):
        image_id = f"{prefix}{i:0{max(width, 4)}d}"
        rng = image_rng(seed, image_id)
        image, gts = generate_scene(spec, rng)
        image = np.rint(image * 255.0) / 255.0
        proposals = generate_proposals(gts, spec.width, spec.height, n_proposals, rng, stub)
        records.append(SceneRecord(image_id, image, gts, proposals))
    return records


def save_dataset(directory: str | Path, records: Sequence[SceneRecord], proposals: bool = True) -> None:
    directory = Path(directory)
    (directory / "images").mkdir(parents=True, exist_ok=True)
    for rec in records:
        suffix = ".pgm" if rec.image.shape[2] == 1 else ".ppm"
        write_pnm(directory / "images" / f"{rec.image_id}{suffix}", rec.image)
    write_jsonl(directory / "annotations.jsonl", [AnnotationRecord(r.image_id, r.gt_boxes) for r in records])
    if proposals:
        write_jsonl(
            directory / "proposals.jsonl",
            [ProposalRecord(r.image_id, p.box, p.score) for r in records for p in r.proposals],
        )


def image_paths(directory: str | Path) -> dict[str, Path]:
    directory = Path(directory)
    root = directory / "images" if (directory / "images").is_dir() else directory
    return {p.stem: p for p in sorted(root.iterdir()) if p.suffix.lower() in IMAGE_SUFFIXES}


def group_proposals(records: Sequence[ProposalRecord]) -> dict[str, list[ScoredProposal]]:
    grouped: dict[str, list[ScoredProposal]] = {}
    for rec in records:
        bucket = grouped.setdefault(rec.image_id, [])
        bucket.append(ScoredProposal(rec.box, max(rec.score, 0.0), len(bucket)))
    return grouped


def load_dataset(directory: str | Path, proposals_file: str | Path | None = None) -> list[SceneRecord]:
    """Load images with their annotations and proposals (both optional on disk)."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"dataset directory {directory} does not exist")
    paths = image_paths(directory)
    ann_path = directory / "annotations.jsonl"
    annotations = {a.image_id: a.gt_boxes for a in read_jsonl(ann_path, "annotation")} if ann_path.exists() else {}
    prop_path = Path(proposals_file) if proposals_file else directory / "proposals.jsonl"
    grouped = group_proposals(read_jsonl(prop_path, "proposal")) if prop_path.exists() else {}
    unknown = sorted(set(grouped) - set(paths))
    if unknown:
        raise KeyError(f"proposals reference unknown image id(s): {', '.join(unknown[:10])}")
    return [
        SceneRecord(image_id, read_pnm(path), list(annotations.get(image_id, [])), grouped.get(image_id, []))
        for image_id, path in paths.items()
    ]


# -- training data -----------------------------------------------------------------


@dataclass(frozen=True)
class PrepConfig:
    proposals_per_image: int = 1000
    augmented_per_image: int = 1000
    sample_target: int = 256
    bin_count: int = 10
    augment: AugmentLimits = AugmentLimits()


def prepare_image(
    rec: SceneRecord, scoring: ScoringConfig = ScoringConfig(), prep: PrepConfig = PrepConfig(), seed: int = 0
) -> M.TrainImage:
    """Top generator proposals plus jittered copies, scored against the GT and
    sampled evenly across score bins."""
    rng = image_rng(seed, rec.image_id)
    h, w = rec.image.shape[:2]
    base = [p.box for p in rank(rec.proposals)[: prep.proposals_per_image]]
    boxes = list(base)
    if base:
        boxes += [augment_box(base[j % len(base)], w, h, prep.augment, rng) for j in range(prep.augmented_per_image)]
    boxes = [b for b in boxes if b.w > 0 and b.h > 0]
    arr = boxes_to_array(boxes)
    scores = gt_scores_array(arr, boxes_to_array(rec.gt_boxes), scoring)
    picked = balanced_sample(list(zip(range(len(boxes)), scores)), SampleSpec(prep.sample_target, prep.bin_count), rng)
    idx = np.array([i for i, _ in picked], dtype=np.int64)
    return M.TrainImage(rec.image_id, rec.image, arr[idx].reshape(-1, 4), scores[idx])


def prepare(records: Sequence[SceneRecord], scoring: ScoringConfig = ScoringConfig(),
            prep: PrepConfig = PrepConfig(), seed: int = 0) -> list[M.TrainImage]:
    return [prepare_image(r, scoring, prep, seed) for r in records]


def training_records(items: Sequence[M.TrainImage]) -> list[ProposalRecord]:
    """Flatten prepared data to proposal-schema records whose score is the GT score."""
    return [
        ProposalRecord(it.image_id, Box(*map(float, b)), float(s))
        for it in items
        for b, s in zip(it.boxes, it.targets)
    ]


def items_from_records(records: Sequence[ProposalRecord], scenes: Sequence[SceneRecord]) -> list[M.TrainImage]:
    by_id = {s.image_id: s for s in scenes}
    grouped: dict[str, list[ProposalRecord]] = {}
    for r in records:
        if r.image_id not in by_id:
            raise KeyError(f"training record references unknown image id {r.image_id!r}")
        grouped.setdefault(r.image_id, []).append(r)
    return [
        M.TrainImage(
            image_id,
            by_id[image_id].image,
            boxes_to_array([r.box for r in recs]),
            np.array([r.score for r in recs]),
        )
        for image_id, recs in sorted(grouped.items())
    ]


# -- training ----------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to go from scene records to a trained model."""

    model: M.ModelConfig = M.ModelConfig()
    train: M.TrainConfig = M.TrainConfig()
    prep: PrepConfig = PrepConfig()
    scoring: ScoringConfig = ScoringConfig()
    pretrain_steps: int = 1500
    pretrain_lr: float = 0.01


def build_pretrained(records: Sequence[SceneRecord], exp: ExperimentConfig) -> M.ObjectnessNet:
    net = M.build(exp.model, exp.train.seed)
    if exp.pretrain_steps > 0:
        M.pretrain_streams(net, [(r.image, r.gt_boxes) for r in records], exp.pretrain_steps, exp.pretrain_lr,
                           seed=exp.train.seed)
    return net


def train_model(
    records: Sequence[SceneRecord],
    exp: ExperimentConfig = ExperimentConfig(),
    items: Sequence[M.TrainImage] | None = None,
    net: M.ObjectnessNet | None = None,
    val_items: Sequence[M.TrainImage] | None = None,
) -> tuple[M.ObjectnessNet, M.History]:
    if not records:
        raise ValueError("no training images")
    if net is None:
        net = build_pretrained(records, exp)
    if items is None:
        items = prepare(records, exp.scoring, exp.prep, exp.train.seed)
    return M.train(net, items, exp.train, val_set=val_items)


# -- ranking and evaluation --------------------------------------------------------


def assess(net: M.ObjectnessNet, rec: SceneRecord, proposals: Sequence[ScoredProposal] | None = None
           ) -> list[ScoredProposal]:
    """Replace generator scores with model scores, keeping source indices."""
    proposals = rec.proposals if proposals is None else proposals
    if not proposals:
        return []
    scores = net.predict(rec.image, boxes_to_array([p.box for p in proposals]))
    return [ScoredProposal(p.box, float(s), p.source_index) for p, s in zip(proposals, scores)]


def ranked_boxes(rec: SceneRecord, net: M.ObjectnessNet | None = None, nms_iou: float | None = None) -> list[Box]:
    ranked = rank(assess(net, rec) if net is not None else rec.proposals)
    if nms_iou is not None:
        ranked = nms(ranked, nms_iou)
    return [p.box for p in ranked]


def evaluate_records(
    records: Sequence[SceneRecord],
    net: M.ObjectnessNet | None = None,
    k_max: int = 50,
    iou_threshold: float = 0.7,
    nms_iou: float | None = None,
    scoring: ScoringConfig = ScoringConfig(),
) -> EvalCurves:
    """Curves for generator order (``net=None``) or model re-ranked order."""
    data = [(ranked_boxes(r, net, nms_iou), r.gt_boxes) for r in records]
    return evaluate(data, k_max, iou_threshold, scoring)


def run_eval(
    proposals: Sequence[ProposalRecord],
    annotations: Sequence[AnnotationRecord],
    k_max: int = 50,
    iou_threshold: float = 0.7,
    net: M.ObjectnessNet | None = None,
    images: dict[str, np.ndarray] | None = None,
    nms_iou: float | None = None,
    scoring: ScoringConfig = ScoringConfig(),
) -> EvalCurves:
    gt = {a.image_id: a.gt_boxes for a in annotations}
    grouped = group_proposals(proposals)
    unresolved = sorted(set(grouped) - set(gt))
    if unresolved:
        raise KeyError(f"no annotations for image id(s): {', '.join(unresolved)}")
    if net is not None:
        missing = sorted(i for i in grouped if images is None or i not in images)
        if missing:
            raise KeyError(f"no image for id(s): {', '.join(missing)}")
    records = [
        SceneRecord(image_id, images[image_id] if net is not None else np.zeros((1, 1, 1)), boxes,
                    grouped.get(image_id, []))
        for image_id, boxes in sorted(gt.items())
    ]
    return evaluate_records(records, net, k_max, iou_threshold, nms_iou, scoring)


# -- weight sweep ------------------------------------------------------------------


@dataclass
class SweepRow:
    w: float
    precision_auc: float
    recall_auc: float


def sweep_weight(
    candidates: Sequence[float],
    train_records: Sequence[SceneRecord],
    val_records: Sequence[SceneRecord] | None = None,
    exp: ExperimentConfig = ExperimentConfig(),
    k_max: int = 10,
    iou_threshold: float = 0.7,
) -> tuple[float, list[SweepRow]]:
    """Train one model per completeness weight and keep the best validation precision.

    Ties go to the smaller weight. The conv streams are pre-trained once and
    shared, since their pre-training does not depend on the weight.
    """
    if not candidates:
        raise ValueError("sweep needs at least one candidate weight")
    train_records = list(train_records)
    if val_records is None:
        folds = kfold_split(list(range(len(train_records))), max(exp.train.k_folds, 2),
                            np.random.default_rng(exp.train.seed))
        held = set(folds[0])
        val_records = [train_records[i] for i in sorted(held)]
        train_records = [r for i, r in enumerate(train_records) if i not in held]
    base = build_pretrained(train_records, exp)
    rows = []
    for w in sorted(set(float(c) for c in candidates)):
        scoring = replace(exp.scoring, w=w)
        items = prepare(train_records, scoring, exp.prep, exp.train.seed)
        val_items = prepare(val_records, scoring, exp.prep, exp.train.seed)
        net, _ = train_model(train_records, replace(exp, scoring=scoring), items=items, net=M.clone(base),
                             val_items=val_items)
        curves = evaluate_records(val_records, net, k_max, iou_threshold, scoring=scoring)
        log.info("w=%.3f precision AUC %.4f", w, curves.auc_precision)
        rows.append(SweepRow(w, curves.auc_precision, curves.auc_recall))
    best = max(rows, key=lambda r: (r.precision_auc, -r.w))
    return best.w, rows


# -- harvest -----------------------------------------------------------------------

ScreenHook = Callable[[SceneRecord], bool]


def accept_all(rec: SceneRecord) -> bool:
    return True


def min_proposal_score(tau: float) -> ScreenHook:
    """Screen that keeps images whose best generator score reaches ``tau``."""

    def screen(rec: SceneRecord) -> bool:
        return any(p.score >= tau for p in rec.proposals)

    return screen


@dataclass
class HarvestConfig:
    checkpoint: Path | str
    input_dir: Optional[Path | str] = None
    output: Optional[Path | str] = None
    screen: str = "accept-all"
    screen_tau: float = 0.5
    min_score: float = 0.0
    pre_nms_iou: float = 0.7
    post_nms_iou: float = 0.5
    top_k: int = 50
    seed: int = 0
    synthetic_count: int = 0
    stub_proposals: int = 100

    def __post_init__(self) -> None:
        for name in ("pre_nms_iou", "post_nms_iou"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {v}")
        if self.top_k < 1:
            raise ValueError("top_k must be at least 1")
        if self.screen not in ("accept-all", "min-proposal-score"):
            raise ValueError(f"unknown screen {self.screen!r}")

    def screen_hook(self) -> ScreenHook:
        return accept_all if self.screen == "accept-all" else min_proposal_score(self.screen_tau)


STAGES = ("images", "images_screened", "proposals", "pre_nms", "thresholded", "top_k", "post_nms")


def harvest_records(
    records: Sequence[SceneRecord],
    net: M.ObjectnessNet,
    cfg: HarvestConfig,
    screen: ScreenHook | None = None,
) -> tuple[list[ObjectRecord], dict[str, int]]:
    """screen -> generator-order NMS -> assess -> threshold -> top-k -> NMS, per image."""
    screen = screen or cfg.screen_hook()
    counts = dict.fromkeys(STAGES, 0)
    manifest: list[ObjectRecord] = []
    for rec in sorted(records, key=lambda r: r.image_id):
        counts["images"] += 1
        if not screen(rec):
            continue
        counts["images_screened"] += 1
        counts["proposals"] += len(rec.proposals)
        survivors = nms(rank(rec.proposals), cfg.pre_nms_iou)
        counts["pre_nms"] += len(survivors)
        ranked = rank(assess(net, rec, survivors), cfg.min_score)
        counts["thresholded"] += len(ranked)
        ranked = ranked[: cfg.top_k]
        counts["top_k"] += len(ranked)
        kept = nms(ranked, cfg.post_nms_iou)
        counts["post_nms"] += len(kept)
        manifest += [ObjectRecord(rec.image_id, p.box, p.score, r) for r, p in enumerate(kept, start=1)]
    return manifest, counts


def harvest(cfg: HarvestConfig, screen: ScreenHook | None = None) -> tuple[list[ObjectRecord], dict[str, int]]:
    """Run the pipeline over a dataset directory (or freshly synthesized scenes)
    and optionally write the JSONL manifest."""
    net = M.load(cfg.checkpoint)
    if cfg.input_dir is not None:
        records = load_dataset(cfg.input_dir)
        size = net.config.image_size
        for rec in records:
            if not rec.proposals:
                h, w = rec.image.shape[:2]
                rec.proposals = generate_proposals(rec.gt_boxes, w, h, cfg.stub_proposals,
                                                   image_rng(cfg.seed, rec.image_id))
            if rec.image.shape[:2] != (size, size):
                raise ValueError(f"image {rec.image_id} is {rec.image.shape[1]}x{rec.image.shape[0]}, "
                                 f"model expects {size}x{size}")
    elif cfg.synthetic_count > 0:
        spec = SceneSpec(width=net.config.image_size, height=net.config.image_size)
        records = synthesize(cfg.synthetic_count, cfg.seed, spec, n_proposals=cfg.stub_proposals)
    else:
        records = []
    manifest, counts = harvest_records(records, net, cfg, screen)
    if cfg.output is not None:
        write_jsonl(cfg.output, manifest)
    return manifest, counts
