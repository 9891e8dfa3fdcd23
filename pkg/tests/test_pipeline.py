import json

import numpy as np
import pytest

from objectness import model as M
from objectness import pipeline as P
from objectness.ingest import AnnotationRecord, ProposalRecord, read_jsonl
from objectness.ranking import ScoredProposal
from objectness.scoring import Box, iou

TINY = M.ModelConfig(channels=(4, 6, 6), fc_widths=(16, 16))
TINY_EXP = P.ExperimentConfig(
    model=TINY,
    train=M.TrainConfig(epochs=3, lr=0.01),
    prep=P.PrepConfig(30, 30, 40),
    pretrain_steps=20,
)


@pytest.fixture(scope="module")
def scenes():
    return P.synthesize(15, seed=2, n_proposals=60)


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory, scenes):
    net, _ = P.train_model(scenes, TINY_EXP)
    path = tmp_path_factory.mktemp("ckpt") / "model.json"
    M.save(net, path)
    return path


class TestDataset:
    def test_synthesize_ids_and_determinism(self):
        a = P.synthesize(3, seed=1, prefix="s", n_proposals=20)
        b = P.synthesize(3, seed=1, prefix="s", n_proposals=20)
        assert [r.image_id for r in a] == ["s0000", "s0001", "s0002"]
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.image, y.image)
            assert x.gt_boxes == y.gt_boxes and x.proposals == y.proposals

    def test_save_load_round_trip(self, tmp_path, scenes):
        P.save_dataset(tmp_path, scenes[:4])
        back = P.load_dataset(tmp_path)
        assert [r.image_id for r in back] == [r.image_id for r in scenes[:4]]
        for a, b in zip(back, scenes[:4]):
            np.testing.assert_array_equal(a.image, b.image)
            assert a.gt_boxes == b.gt_boxes
            assert len(a.proposals) == len(b.proposals)

    def test_unknown_proposal_image(self, tmp_path, scenes):
        P.save_dataset(tmp_path, scenes[:2])
        with open(tmp_path / "proposals.jsonl", "a") as fh:
            fh.write('{"image": "ghost", "x": 0, "y": 0, "w": 1, "h": 1, "score": 0.1}\n')
        with pytest.raises(KeyError, match="ghost"):
            P.load_dataset(tmp_path)

    def test_missing_dir(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            P.load_dataset(tmp_path / "nope")


class TestPrep:
    def test_prepare_image(self, scenes):
        item = P.prepare_image(scenes[0], prep=P.PrepConfig(30, 30, 40))
        assert item.boxes.shape == (40, 4) and item.targets.shape == (40,)
        assert np.all((item.targets >= 0) & (item.targets <= 1))

    def test_records_round_trip(self, scenes):
        items = P.prepare(scenes[:3], prep=P.PrepConfig(10, 10, 12))
        back = P.items_from_records(P.training_records(items), scenes)
        for a, b in zip(back, sorted(items, key=lambda i: i.image_id)):
            np.testing.assert_array_equal(a.boxes, b.boxes)
            np.testing.assert_array_equal(a.targets, b.targets)

    def test_records_unknown_image(self, scenes):
        with pytest.raises(KeyError):
            P.items_from_records([ProposalRecord("ghost", Box(0, 0, 1, 1), 0.5)], scenes)


class TestEval:
    def test_ground_truth_proposals_are_perfect(self):
        gts = [Box(0, 0, 10, 10), Box(20, 20, 10, 10)]
        props = [ProposalRecord("a", g, 1.0) for g in gts]
        curves = P.run_eval(props, [AnnotationRecord("a", gts)], k_max=2)
        assert curves.precision.tolist() == [1, 1]
        assert curves.recall.tolist() == [0.5, 1]

    def test_k_max_one(self):
        g = Box(0, 0, 10, 10)
        curves = P.run_eval([ProposalRecord("a", g, 1.0)], [AnnotationRecord("a", [g])], k_max=1)
        assert len(curves.precision) == 1

    def test_unresolved_ids(self):
        g = Box(0, 0, 10, 10)
        with pytest.raises(KeyError, match="b"):
            P.run_eval([ProposalRecord("b", g, 1.0)], [AnnotationRecord("a", [g])])

    def test_model_order_needs_images(self, checkpoint):
        g = Box(0, 0, 10, 10)
        with pytest.raises(KeyError):
            P.run_eval([ProposalRecord("a", g, 1.0)], [AnnotationRecord("a", [g])], net=M.load(checkpoint))

    def test_nms_changes_ranked_boxes(self, scenes):
        plain = P.ranked_boxes(scenes[0])
        suppressed = P.ranked_boxes(scenes[0], nms_iou=0.5)
        assert len(suppressed) < len(plain)
        assert set(suppressed) <= set(plain)


class TestSweep:
    def test_single_candidate(self, scenes):
        best, rows = P.sweep_weight([0.5], scenes, exp=TINY_EXP, k_max=5)
        assert best == 0.5 and len(rows) == 1

    def test_two_candidates_pick_higher_auc_and_repeat(self, scenes):
        best, rows = P.sweep_weight([0.6, 0.4], scenes[:10], scenes[10:], exp=TINY_EXP, k_max=5)
        assert [r.w for r in rows] == [0.4, 0.6]
        top = max(rows, key=lambda r: (r.precision_auc, -r.w))
        assert best == top.w
        again = P.sweep_weight([0.6, 0.4], scenes[:10], scenes[10:], exp=TINY_EXP, k_max=5)
        assert again == (best, rows)

    def test_empty(self, scenes):
        with pytest.raises(ValueError):
            P.sweep_weight([], scenes)


def manifest_invariants(manifest, post_nms):
    by_image = {}
    for rec in manifest:
        by_image.setdefault(rec.image_id, []).append(rec)
    assert [r.image_id for r in manifest] == sorted(r.image_id for r in manifest)
    for recs in by_image.values():
        assert [r.rank for r in recs] == list(range(1, len(recs) + 1))
        assert all(a.score >= b.score for a, b in zip(recs, recs[1:]))
        for i, a in enumerate(recs):
            for b in recs[i + 1 :]:
                assert iou(a.box, b.box) < post_nms


class TestHarvest:
    def test_empty_directory(self, tmp_path, checkpoint):
        (tmp_path / "in").mkdir()
        manifest, counts = P.harvest(P.HarvestConfig(checkpoint, tmp_path / "in", tmp_path / "out.jsonl"))
        assert manifest == [] and set(counts.values()) == {0}
        assert (tmp_path / "out.jsonl").read_text() == ""

    def test_min_score_above_ceiling(self, tmp_path, checkpoint, scenes):
        P.save_dataset(tmp_path, scenes[:3])
        manifest, counts = P.harvest(P.HarvestConfig(checkpoint, tmp_path, min_score=1.5))
        assert manifest == [] and counts["thresholded"] == 0 and counts["images"] == 3

    def test_duplicated_object_survives_once(self, checkpoint, scenes):
        rec = scenes[0]
        g = rec.gt_boxes[0]
        dup = P.SceneRecord(rec.image_id, rec.image, [g], [ScoredProposal(g, 0.9, i) for i in range(5)])
        cfg = P.HarvestConfig(checkpoint, pre_nms_iou=1.0, post_nms_iou=0.5)
        manifest, counts = P.harvest_records([dup], M.load(checkpoint), cfg)
        assert counts["pre_nms"] == 1 and len(manifest) == 1 and manifest[0].box == g

    def test_duplicates_removed_after_assessment(self, checkpoint, scenes):
        rec = scenes[0]
        g = rec.gt_boxes[0]
        near = Box(g.x, g.y, g.w * 0.95, g.h)
        dup = P.SceneRecord(rec.image_id, rec.image, [g], [ScoredProposal(g, 0.9, 0), ScoredProposal(near, 0.8, 1)])
        # lenient pre-assessment NMS keeps both; the 0.5 post-NMS keeps one
        manifest, counts = P.harvest_records([dup], M.load(checkpoint), P.HarvestConfig(checkpoint, pre_nms_iou=1.0))
        assert counts["pre_nms"] == 2 and counts["post_nms"] == 1 and len(manifest) == 1

    def test_stage_counts_and_invariants(self, tmp_path, checkpoint, scenes):
        P.save_dataset(tmp_path, scenes)
        cfg = P.HarvestConfig(checkpoint, tmp_path, min_score=0.1, top_k=8, screen="min-proposal-score",
                              screen_tau=0.95)
        manifest, counts = P.harvest(cfg)
        values = [counts[s] for s in P.STAGES]
        assert counts["images"] == len(scenes)
        assert counts["images"] >= counts["images_screened"]
        assert counts["proposals"] >= counts["pre_nms"] >= counts["thresholded"] >= counts["top_k"] >= counts["post_nms"]
        assert counts["post_nms"] == len(manifest) and all(v >= 0 for v in values)
        manifest_invariants(manifest, cfg.post_nms_iou)

    def test_byte_identical(self, tmp_path, checkpoint):
        outs = []
        for name in ("a.jsonl", "b.jsonl"):
            P.harvest(P.HarvestConfig(checkpoint, output=tmp_path / name, synthetic_count=6, seed=9))
            outs.append((tmp_path / name).read_bytes())
        assert outs[0] == outs[1] and outs[0]
        manifest_invariants(read_jsonl(tmp_path / "a.jsonl", "object"), 0.5)

    def test_fills_missing_proposals(self, tmp_path, checkpoint, scenes):
        P.save_dataset(tmp_path, scenes[:2], proposals=False)
        _, counts = P.harvest(P.HarvestConfig(checkpoint, tmp_path, stub_proposals=30))
        assert counts["proposals"] == 60

    def test_rejects_wrong_image_size(self, tmp_path, checkpoint):
        small = P.synthesize(1, seed=0, spec=P.SceneSpec(width=32, height=32, max_size=16))
        P.save_dataset(tmp_path, small)
        with pytest.raises(ValueError, match="32x32"):
            P.harvest(P.HarvestConfig(checkpoint, tmp_path))

    @pytest.mark.parametrize("kwargs", [dict(pre_nms_iou=0), dict(post_nms_iou=1.2), dict(top_k=0), dict(screen="x")])
    def test_config_validation(self, kwargs, checkpoint):
        with pytest.raises(ValueError):
            P.HarvestConfig(checkpoint, **kwargs)

    def test_custom_screen_hook(self, checkpoint, scenes):
        keep_first = {scenes[0].image_id}
        _, counts = P.harvest_records(scenes[:4], M.load(checkpoint), P.HarvestConfig(checkpoint),
                                      screen=lambda r: r.image_id in keep_first)
        assert counts["images"] == 4 and counts["images_screened"] == 1


def test_summary_json_serializable(checkpoint):
    _, counts = P.harvest(P.HarvestConfig(checkpoint, synthetic_count=2))
    assert list(json.loads(json.dumps(counts))) == list(P.STAGES)
