"""Command-line entry point: ``objectness <subcommand> [flags]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from . import model as M
from . import pipeline as P
from .dataprep import AugmentLimits
from .ingest import ProposalRecord, read_jsonl, read_pnm, write_jsonl
from .metrics import write_report
from .ranking import nms, rank
from .scoring import ScoringConfig
from .synth import SceneSpec, StubConfig


def parse_weights(text: str) -> list[float]:
    """``0.35..0.65`` (step 0.05), ``0.35..0.65:0.1`` or ``0.4,0.5,0.6``."""
    if ".." in text:
        span, _, step = text.partition(":")
        lo, hi = (float(v) for v in span.split(".."))
        step_v = float(step) if step else 0.05
        if step_v <= 0 or hi < lo:
            raise argparse.ArgumentTypeError(f"bad weight range {text!r}")
        n = int(round((hi - lo) / step_v))
        return [round(lo + i * step_v, 10) for i in range(n + 1)]
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad weight list {text!r}") from None


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON file of flag defaults (keys use underscores)")
    p.add_argument("--seed", type=int, default=0)


def _add_training(p: argparse.ArgumentParser) -> None:
    p.add_argument("--w", type=float, default=0.4, help="completeness weight")
    p.add_argument("--augmented", type=int, default=1000, help="jittered boxes added per image")
    p.add_argument("--per-image", type=int, default=1000, help="generator proposals used per image")
    p.add_argument("--sample-target", type=int, default=256, help="proposals sampled per image")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="objectness", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write synthetic scenes, GT and stub proposals")
    _add_common(p)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--proposals", type=int, default=100, help="stub proposals per scene")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--min-objects", type=int, default=1)
    p.add_argument("--max-objects", type=int, default=3)

    p = sub.add_parser("prep", help="augment, score and sample proposals into training JSONL")
    _add_common(p)
    _add_training(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("train", help="train a model (or sweep the completeness weight)")
    _add_common(p)
    _add_training(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--prep", type=Path, help="training JSONL from `prep` (skips internal prep)")
    p.add_argument("--out", type=Path, required=True, help="checkpoint path")
    p.add_argument("--history", type=Path, help="per-epoch loss CSV")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--weight-decay", type=float, default=0.0005)
    p.add_argument("--batch", type=int, default=256, help="max proposals per mini-batch")
    p.add_argument("--pretrain-steps", type=int, default=1500)
    p.add_argument("--no-freeze", action="store_true", help="train conv streams with the head")
    p.add_argument("--single-stream", action="store_true", help="ablation: object stream only")
    p.add_argument("--single-scale", action="store_true", help="ablation: ROI-pool the last stage only")
    p.add_argument("--sweep-w", type=parse_weights, help="e.g. 0.35..0.65")
    p.add_argument("--k-max", type=int, default=10, help="top-k range for sweep validation")
    p.add_argument("--iou", type=float, default=0.7)

    p = sub.add_parser("score", help="assess proposals with a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--proposals", type=Path, help="defaults to <data>/proposals.jsonl")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("rank", help="threshold, sort and NMS a proposal file")
    _add_common(p)
    p.add_argument("--proposals", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--min-score", type=float, default=0.0)
    p.add_argument("--iou", type=float, help="NMS IOU threshold (omit for no NMS)")
    p.add_argument("--top-k", type=int, help="keep at most this many per image")

    p = sub.add_parser("eval", help="precision/recall/mean-score curves as CSV")
    _add_common(p)
    p.add_argument("--proposals", type=Path, required=True)
    p.add_argument("--annotations", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, help="re-rank with this model first")
    p.add_argument("--data", type=Path, help="dataset dir holding the images (needed with --checkpoint)")
    p.add_argument("--k-max", type=int, default=50)
    p.add_argument("--iou", type=float, default=0.7)
    p.add_argument("--nms", type=float, help="apply NMS at this IOU before evaluating")
    p.add_argument("--w", type=float, default=0.4)
    p.add_argument("--out", type=Path, help="CSV path (stdout if omitted)")

    p = sub.add_parser("harvest", help="full pipeline to an object manifest")
    _add_common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, help="dataset dir; omit with --synthetic")
    p.add_argument("--synthetic", type=int, default=0, help="harvest this many generated scenes")
    p.add_argument("--out", type=Path, required=True, help="manifest JSONL")
    p.add_argument("--summary", type=Path, help="stage counts as JSON")
    p.add_argument("--screen", choices=["accept-all", "min-proposal-score"], default="accept-all")
    p.add_argument("--screen-tau", type=float, default=0.5)
    p.add_argument("--min-score", type=float, default=0.0)
    p.add_argument("--pre-nms", type=float, default=0.7)
    p.add_argument("--post-nms", type=float, default=0.5)
    p.add_argument("--top-k", type=int, default=50)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> argparse.Namespace:
    """Parse ``argv``, taking flag defaults from ``--config`` when given.

    Explicit command-line flags still win over the file.
    """
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", type=Path)
    known, _ = pre.parse_known_args(argv)
    command = next((a for a in argv if a in COMMANDS), None)
    if known.config is None or command is None:
        return parser.parse_args(argv)
    try:
        overrides = json.loads(Path(known.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        parser.error(f"cannot read --config {known.config}: {exc}")
    if not isinstance(overrides, dict):
        parser.error("--config must hold a JSON object")
    subparser = parser._subparsers._group_actions[0].choices[command]  # type: ignore[union-attr]
    actions = {a.dest: a for a in subparser._actions}
    unknown = sorted(set(overrides) - set(actions))
    if unknown:
        parser.error(f"unknown --config keys for {command}: {', '.join(unknown)}")
    for key, value in overrides.items():
        actions[key].required = False
        # argparse runs string defaults through the flag's type
        actions[key].default = value
    return parser.parse_args(argv)


def _experiment(args) -> P.ExperimentConfig:
    model_cfg = M.ModelConfig(
        stream_count=1 if getattr(args, "single_stream", False) else 2,
        roi_scales=(2,) if getattr(args, "single_scale", False) else (0, 1, 2),
        freeze_streams=not getattr(args, "no_freeze", False),
    )
    train_cfg = M.TrainConfig(
        lr=getattr(args, "lr", 0.001),
        momentum=getattr(args, "momentum", 0.9),
        weight_decay=getattr(args, "weight_decay", 0.0005),
        max_proposals_per_batch=getattr(args, "batch", 256),
        epochs=getattr(args, "epochs", 30),
        seed=args.seed,
    )
    prep = P.PrepConfig(args.per_image, args.augmented, args.sample_target, 10, AugmentLimits())
    return P.ExperimentConfig(model_cfg, train_cfg, prep, ScoringConfig(w=args.w),
                              getattr(args, "pretrain_steps", 1500))


def cmd_synth(args) -> None:
    spec = SceneSpec(width=args.size, height=args.size, object_count_range=(args.min_objects, args.max_objects),
                     min_size=max(2, args.size // 5), max_size=max(2, args.size // 2))
    records = P.synthesize(args.count, args.seed, spec, StubConfig(), args.proposals)
    P.save_dataset(args.out, records)
    print(f"wrote {len(records)} scenes to {args.out}")


def cmd_prep(args) -> None:
    exp = _experiment(args)
    records = P.load_dataset(args.data)
    items = P.prepare(records, exp.scoring, exp.prep, args.seed)
    write_jsonl(args.out, P.training_records(items))
    print(f"wrote {sum(len(i.targets) for i in items)} training proposals for {len(items)} images to {args.out}")


def cmd_train(args) -> None:
    exp = _experiment(args)
    records = P.load_dataset(args.data)
    if args.sweep_w:
        best, rows = P.sweep_weight(args.sweep_w, records, exp=exp, k_max=args.k_max, iou_threshold=args.iou)
        print("w,precision_auc,recall_auc")
        for r in rows:
            print(f"{r.w:.6f},{r.precision_auc:.6f},{r.recall_auc:.6f}")
        print(f"best w: {best}")
        exp = replace(exp, scoring=replace(exp.scoring, w=best))
    items = P.items_from_records(read_jsonl(args.prep), records) if args.prep and not args.sweep_w else None
    net, history = P.train_model(records, exp, items=items)
    M.save(net, args.out)
    if args.history:
        history.write_csv(args.history)
    print(f"saved {args.out} (best epoch {history.best_epoch})")


def cmd_score(args) -> None:
    net = M.load(args.checkpoint)
    records = P.load_dataset(args.data, args.proposals)
    out = [
        ProposalRecord(rec.image_id, p.box, p.score)
        for rec in records
        for p in sorted(P.assess(net, rec), key=lambda p: p.source_index)
    ]
    write_jsonl(args.out, out)
    print(f"scored {len(out)} proposals")


def cmd_rank(args) -> None:
    grouped = P.group_proposals(read_jsonl(args.proposals))
    out = []
    for image_id in sorted(grouped):
        ranked = rank(grouped[image_id], args.min_score)
        if args.iou is not None:
            ranked = nms(ranked, args.iou)
        if args.top_k is not None:
            ranked = ranked[: args.top_k]
        out += [ProposalRecord(image_id, p.box, p.score) for p in ranked]
    write_jsonl(args.out, out)
    print(f"kept {len(out)} proposals")


def cmd_eval(args) -> None:
    proposals = read_jsonl(args.proposals)
    annotations = read_jsonl(args.annotations, "annotation")
    net = images = None
    if args.checkpoint is not None:
        if args.data is None:
            raise ValueError("--checkpoint needs --data pointing at the images")
        net = M.load(args.checkpoint)
        images = {k: read_pnm(v) for k, v in P.image_paths(args.data).items()}
    curves = P.run_eval(proposals, annotations, args.k_max, args.iou, net, images, args.nms, ScoringConfig(w=args.w))
    if args.out is None:
        write_report(curves, sys.stdout)
    else:
        write_report(curves, args.out)
        print(f"precision AUC {curves.auc_precision:.6f}, recall AUC {curves.auc_recall:.6f}, "
              f"mean score AUC {curves.auc_mean_score:.6f}")


def cmd_harvest(args) -> None:
    cfg = P.HarvestConfig(
        checkpoint=args.checkpoint, input_dir=args.data, output=args.out, screen=args.screen,
        screen_tau=args.screen_tau, min_score=args.min_score, pre_nms_iou=args.pre_nms,
        post_nms_iou=args.post_nms, top_k=args.top_k, seed=args.seed, synthetic_count=args.synthetic,
    )
    _, counts = P.harvest(cfg)
    text = json.dumps(counts, indent=2) + "\n"
    if args.summary:
        args.summary.write_text(text)
    sys.stdout.write(text)


COMMANDS = {
    "synth": cmd_synth,
    "prep": cmd_prep,
    "train": cmd_train,
    "score": cmd_score,
    "rank": cmd_rank,
    "eval": cmd_eval,
    "harvest": cmd_harvest,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = _apply_config(parser, sys.argv[1:] if argv is None else list(argv))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        COMMANDS[args.command](args)
    except Exception as exc:  # noqa: BLE001 - surface any failure as one diagnostic line
        print(f"objectness {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
