"""Acceptance suite: one test per criterion, each recording a pass/fail line.

The lines are printed at the end of the run (see ``conftest.py``) and also
to stdout, so ``pytest tests/test_acceptance.py -s`` shows them inline.
"""

import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from gradcases import LAYER_CASES, full_model_error, head_error
from oracles import clustered_boxes, greedy_nms, plain_iou, random_int_box, raster_counts, rescan_curves

from objectness import model as M
from objectness import pipeline as P
from objectness.cli import main
from objectness.ingest import (
    AnnotationRecord,
    DecodeError,
    ProposalRecord,
    decode_pnm,
    dumps_jsonl,
    encode_pnm,
    parse_voc_annotation,
    read_jsonl,
    serialize_voc_annotation,
    write_jsonl,
)
from objectness.metrics import evaluate
from objectness.ranking import nms_indices
from objectness.scoring import Box, completeness_score, fullness_score, iou, objectness_gt_score, score_components

pytestmark = pytest.mark.slow


def report(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_criterion_1_scoring_closed_forms():
    t0 = time.perf_counter()
    checks = {
        "s_f(0.5)": (fullness_score(0.5), 0.314980),
        "s_f(1.0)": (fullness_score(1.0), 0.995882),
        "s_f(0)": (fullness_score(0.0), 4.53e-5),
        "s_c(0.9)": (completeness_score(0.9), 0.81),
        "s_final identical": (score_components(Box(0, 0, 10, 10), Box(0, 0, 10, 10)).s_final, 0.997529),
        "s_final centred": (score_components(Box(0, 0, 20, 20), Box(5, 5, 10, 10)).s_final, 0.40372),
        "s_final disjoint": (score_components(Box(0, 0, 10, 10), Box(50, 50, 10, 10)).s_final, 2.72e-5),
    }
    worst = max(abs(got - want) for got, want in checks.values())
    centred = score_components(Box(0, 0, 20, 20), Box(5, 5, 10, 10))
    exact = (1 + math.exp(3)) ** (-1 / 0.6)
    ok_centred = (centred.c_c, centred.c_f) == (1.0, 0.25) and centred.s_f == pytest.approx(exact, rel=1e-12)
    elapsed = time.perf_counter() - t0
    report(1, worst <= 1e-5 and ok_centred and elapsed < 1,
           f"max |err|={worst:.2e} over {len(checks)} values (tol 1e-5), {elapsed:.3f}s")


def test_criterion_2_geometry_nms_metrics_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)

    nms_bad = 0
    for _ in range(1000):
        n = int(rng.integers(0, 201))
        boxes = clustered_boxes(rng, n)
        t = float(rng.uniform(0.05, 1.0))
        if nms_indices(np.array(boxes).reshape(-1, 4), t) != greedy_nms(boxes, t):
            nms_bad += 1

    def gt_score(p, gts):
        return objectness_gt_score(Box(*p), [Box(*g) for g in gts])

    eval_bad = 0
    for _ in range(200):
        data = []
        for _ in range(int(rng.integers(1, 5))):
            gts = [random_int_box(rng, 40, 2) for _ in range(int(rng.integers(1, 4)))]
            props = [random_int_box(rng, 40, 2) for _ in range(int(rng.integers(0, 15)))]
            # seed some near-matches so hits occur
            props += [(g[0] + int(rng.integers(0, 2)), g[1], g[2], g[3]) for g in gts if rng.random() < 0.7]
            rng.shuffle(props)
            data.append((props, gts))
        k_max = int(rng.integers(1, 15))
        t = float(rng.choice([0.5, 0.7, 0.9]))
        c = evaluate([([Box(*p) for p in ps], [Box(*g) for g in gs]) for ps, gs in data], k_max, t)
        p, r, m = rescan_curves(data, k_max, t, gt_score)
        if not (np.allclose(c.precision, p, rtol=0, atol=1e-12) and np.allclose(c.recall, r, rtol=0, atol=1e-12)
                and np.allclose(c.mean_gt_score, m, rtol=0, atol=1e-12)):
            eval_bad += 1

    iou_worst = 0.0
    for _ in range(10000):
        a, b = random_int_box(rng, 48), random_int_box(rng, 48)
        inter, _, _, union = raster_counts(a, b, 48)
        iou_worst = max(iou_worst, abs(iou(Box(*a), Box(*b)) - inter / union), abs(plain_iou(a, b) - inter / union))

    elapsed = time.perf_counter() - t0
    ok = nms_bad == 0 and eval_bad == 0 and iou_worst <= 1e-9 and elapsed < 30
    report(2, ok, f"nms mismatches {nms_bad}/1000, evaluate mismatches {eval_bad}/200, "
                  f"max IOU err {iou_worst:.1e}/10000, {elapsed:.1f}s")


def test_criterion_3_gradient_checks():
    t0 = time.perf_counter()
    errors = {name: case(np.random.default_rng(i)) for i, (name, case) in enumerate(LAYER_CASES.items())}
    errors["head"] = head_error(np.random.default_rng(100))
    errors["model"] = full_model_error(np.random.default_rng(101))
    elapsed = time.perf_counter() - t0
    name, worst = max(errors.items(), key=lambda kv: kv[1])
    report(3, worst < 1e-4 and elapsed < 60,
           f"max relative error {worst:.2e} ({name}) over {len(errors)} checks, {elapsed:.1f}s")


def test_criterion_4_overfit():
    from objectness.scoring import boxes_to_array, gt_scores_array
    from objectness.synth import SceneSpec, generate_proposals, generate_scene

    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    items = []
    for i in range(5):
        image, gts = generate_scene(SceneSpec(), rng)
        boxes = boxes_to_array([p.box for p in generate_proposals(gts, 64, 64, 40, rng)])
        items.append(M.TrainImage(f"s{i}", image, boxes, gt_scores_array(boxes, boxes_to_array(gts))))
    net = M.build(M.ModelConfig(freeze_streams=False), 0)
    _, hist = M.train(net, items, M.TrainConfig(lr=0.03, epochs=200, k_folds=1))
    elapsed = time.perf_counter() - t0
    final = hist.train_loss[-1]
    report(4, final < 0.01 and elapsed < 300, f"final training loss {final:.4f} after 200 epochs, {elapsed:.0f}s")


@pytest.fixture(scope="module")
def e2e():
    t0 = time.perf_counter()
    train = P.synthesize(500, seed=1)
    test = P.synthesize(200, seed=2, prefix="test")
    exp = P.ExperimentConfig(train=M.TrainConfig(lr=0.01, epochs=60), prep=P.PrepConfig(100, 100, 128))
    net, _ = P.train_model(train, exp)
    return net, test, time.perf_counter() - t0


def test_criterion_5_end_to_end_gain(e2e):
    net, test, train_time = e2e
    t0 = time.perf_counter()
    stub = P.evaluate_records(test, None, 10)
    model = P.evaluate_records(test, net, 10)
    elapsed = train_time + time.perf_counter() - t0
    gain = model.auc_precision - stub.auc_precision
    ms_stub, ms_model = stub.mean_gt_score[4], model.mean_gt_score[4]
    report(5, gain >= 0.10 and ms_model > ms_stub and elapsed < 600,
           f"precision AUC stub {stub.auc_precision:.3f} -> model {model.auc_precision:.3f} (gain {gain:+.3f}), "
           f"mean_gt_score@5 {ms_stub:.3f} -> {ms_model:.3f}, {elapsed:.0f}s")


def test_criterion_6_nms_direction(e2e):
    net, test, _ = e2e
    plain = P.evaluate_records(test, net, 10)
    sweep = {t: P.evaluate_records(test, net, 10, nms_iou=t) for t in (0.9, 0.7, 0.5, 0.3)}
    precisions = [sweep[t].auc_precision for t in (0.9, 0.7, 0.5, 0.3)]
    recall_ok = sweep[0.7].auc_recall > plain.auc_recall
    monotone = all(a > b for a, b in zip(precisions, precisions[1:]))
    report(6, recall_ok and monotone,
           f"recall AUC no-NMS {plain.auc_recall:.3f} vs NMS0.7 {sweep[0.7].auc_recall:.3f}; "
           f"precision AUC at 0.9/0.7/0.5/0.3 = {'/'.join(f'{p:.3f}' for p in precisions)}")


def test_criterion_7_determinism(tmp_path):
    data = tmp_path / "data"
    assert main(["synth", "--out", str(data), "--count", "6", "--seed", "7", "--proposals", "40"]) == 0
    train_args = ["--data", str(data), "--epochs", "3", "--pretrain-steps", "20", "--lr", "0.01",
                  "--per-image", "20", "--augmented", "20", "--sample-target", "24"]
    outputs = []
    for run in ("a", "b"):
        ckpt, hist, manifest, summary = (tmp_path / f"{run}.{ext}" for ext in ("model.json", "hist.csv",
                                                                                "manifest.jsonl", "summary.json"))
        assert main(["train", *train_args, "--out", str(ckpt), "--history", str(hist)]) == 0
        assert main(["harvest", "--checkpoint", str(tmp_path / "a.model.json"), "--data", str(data),
                     "--out", str(manifest), "--summary", str(summary)]) == 0
        outputs.append([p.read_bytes() for p in (ckpt, hist, manifest, summary)])
    same = [x == y for x, y in zip(*outputs)]
    report(7, all(same) and all(outputs[0]),
           f"checkpoint/history/manifest/summary identical across runs: {same}")


def test_criterion_8_format_fidelity(tmp_path):
    rng = np.random.default_rng(8)

    voc_ok = True
    for i in range(200):
        boxes = [Box(*(int(v) for v in random_int_box(rng, 500))) for _ in range(int(rng.integers(0, 6)))]
        rec = AnnotationRecord(f"img_{i:04d}", boxes)
        voc_ok &= parse_voc_annotation(serialize_voc_annotation(rec)) == rec

    prefixes_rejected = 0
    total_prefixes = 0
    for channels in (1, 3):
        data = encode_pnm(rng.integers(0, 256, (4, 5, channels)) / 255.0)
        decode_pnm(data)
        for n in range(len(data)):
            total_prefixes += 1
            try:
                decode_pnm(data[:n])
            except DecodeError:
                prefixes_rejected += 1

    records = [ProposalRecord(f"img{i % 7}", Box(*rng.uniform(0, 500, 2), *rng.uniform(0.1, 200, 2)),
                              float(rng.random())) for i in range(1000)]
    write_jsonl(tmp_path / "p.jsonl", records)
    back = read_jsonl(tmp_path / "p.jsonl")
    jsonl_err = max(
        max(max(abs(u - v) for u, v in zip(a.box.as_tuple(), b.box.as_tuple())), abs(a.score - b.score))
        for a, b in zip(back, records)
    )
    jsonl_ok = len(back) == len(records) and jsonl_err <= 5e-7 + 1e-12 and dumps_jsonl(back) == (tmp_path / "p.jsonl").read_text()
    report(8, voc_ok and prefixes_rejected == total_prefixes and jsonl_ok,
           f"VOC round trip {'ok' if voc_ok else 'broken'} (200 records), "
           f"PNM prefixes rejected {prefixes_rejected}/{total_prefixes}, JSONL max err {jsonl_err:.1e}")
