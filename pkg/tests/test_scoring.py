import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from objectness.scoring import (
    Box,
    InvalidGroundTruth,
    ScoringConfig,
    boxes_to_array,
    completeness_score,
    fullness_score,
    gt_scores_array,
    intersection_area,
    iou,
    iou_matrix,
    objectness_gt_score,
    score_components,
)

from oracles import raster_counts


def logistic(c_f, alpha=0.5, beta=12.0, gamma=0.6, q=1.0):
    return (1.0 + q * math.exp(-beta * (c_f - alpha))) ** (-1.0 / gamma)


coords = st.floats(min_value=-50, max_value=50, allow_nan=False)
sides = st.floats(min_value=0, max_value=60, allow_nan=False)
boxes = st.builds(Box, coords, coords, sides, sides)
pos_boxes = st.builds(Box, coords, coords, st.floats(0.5, 60), st.floats(0.5, 60))


class TestBox:
    def test_rejects_negative_size(self):
        with pytest.raises(ValueError):
            Box(0, 0, -1, 2)

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            Box(float("nan"), 0, 1, 1)

    def test_corners(self):
        b = Box.from_corners(1, 2, 11, 22)
        assert b.as_tuple() == (1, 2, 10, 20)
        assert (b.x2, b.y2, b.area) == (11, 22, 200)


class TestIntersection:
    def test_identical(self):
        assert intersection_area(Box(0, 0, 10, 10), Box(0, 0, 10, 10)) == 100

    def test_disjoint(self):
        assert intersection_area(Box(0, 0, 10, 10), Box(20, 20, 5, 5)) == 0

    def test_partial(self):
        assert intersection_area(Box(0, 0, 10, 10), Box(5, 5, 10, 10)) == 25

    def test_touching_edges_share_nothing(self):
        assert intersection_area(Box(0, 0, 10, 10), Box(10, 0, 10, 10)) == 0


class TestIou:
    def test_identical(self):
        assert iou(Box(0, 0, 10, 10), Box(0, 0, 10, 10)) == 1.0

    def test_partial(self):
        assert iou(Box(0, 0, 10, 10), Box(5, 5, 10, 10)) == pytest.approx(25 / 175, abs=1e-12)

    def test_disjoint(self):
        assert iou(Box(0, 0, 10, 10), Box(20, 0, 10, 10)) == 0.0

    def test_two_empty_boxes(self):
        assert iou(Box(3, 3, 0, 0), Box(3, 3, 0, 0)) == 0.0

    @given(boxes, boxes)
    def test_symmetric_and_bounded(self, a, b):
        assert iou(a, b) == iou(b, a)
        assert 0.0 <= iou(a, b) <= 1.0
        assert intersection_area(a, b) <= min(a.area, b.area) + 1e-9

    def test_matches_raster_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(500):
            a = tuple(int(v) for v in (rng.integers(0, 30), rng.integers(0, 30), rng.integers(1, 20), rng.integers(1, 20)))
            b = tuple(int(v) for v in (rng.integers(0, 30), rng.integers(0, 30), rng.integers(1, 20), rng.integers(1, 20)))
            inter, _, _, union = raster_counts(a, b, 50)
            assert iou(Box(*a), Box(*b)) == pytest.approx(inter / union, abs=1e-9)

    def test_matrix_agrees_with_scalar(self):
        rng = np.random.default_rng(2)
        a = [Box(*rng.uniform(0, 20, 2), *rng.uniform(0, 10, 2)) for _ in range(15)]
        b = [Box(*rng.uniform(0, 20, 2), *rng.uniform(0, 10, 2)) for _ in range(9)]
        m = iou_matrix(boxes_to_array(a), boxes_to_array(b))
        expected = np.array([[iou(p, g) for g in b] for p in a])
        np.testing.assert_allclose(m, expected, atol=1e-12)


class TestTransfers:
    @pytest.mark.parametrize(
        "c_f,expected", [(0.5, 0.314980), (1.0, 0.995882), (0.0, 4.53e-5)]
    )
    def test_fullness_reference_values(self, c_f, expected):
        # reference values are quoted to a handful of digits
        assert fullness_score(c_f) == pytest.approx(expected, abs=1e-5)

    def test_fullness_matches_closed_form(self):
        for c in np.linspace(0, 1, 21):
            assert fullness_score(c) == pytest.approx(logistic(c), abs=1e-15)

    def test_completeness_is_square(self):
        assert completeness_score(0.9) == pytest.approx(0.81)

    def test_fullness_strictly_increasing(self):
        values = [fullness_score(c) for c in np.linspace(0, 1, 101)]
        assert all(b > a for a, b in zip(values, values[1:]))

    def test_linear_switch(self):
        cfg = ScoringConfig(linear=True, w=0.3)
        br = score_components(Box(0, 0, 20, 10), Box(0, 0, 10, 10), cfg)
        assert (br.s_c, br.s_f) == (br.c_c, br.c_f)
        assert br.s_final == pytest.approx(0.3 * 1.0 + 0.7 * 0.5)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ScoringConfig(w=1.5)
        with pytest.raises(ValueError):
            ScoringConfig(gamma=0)


class TestScoreComponents:
    def test_perfect_match(self):
        br = score_components(Box(0, 0, 10, 10), Box(0, 0, 10, 10))
        assert (br.c_c, br.c_f, br.s_c) == (1.0, 1.0, 1.0)
        assert br.s_f == pytest.approx(0.995882, abs=1e-6)
        assert br.s_final == pytest.approx(0.997529, abs=1e-6)

    def test_gt_centred_in_proposal(self):
        br = score_components(Box(0, 0, 20, 20), Box(5, 5, 10, 10))
        assert br.c_c == 1.0 and br.c_f == 0.25
        assert br.s_f == pytest.approx((1 + math.e**3) ** (-1 / 0.6), abs=1e-12)
        assert br.s_final == pytest.approx(0.40372, abs=1e-5)

    def test_disjoint(self):
        br = score_components(Box(0, 0, 5, 5), Box(20, 20, 5, 5))
        assert br.c_c == 0 and br.c_f == 0 and br.s_c == 0
        assert br.s_f == pytest.approx(4.53e-5, abs=1e-5)
        assert br.s_f == pytest.approx((1 + math.e**6) ** (-1 / 0.6), abs=1e-15)
        assert br.s_final == pytest.approx(0.6 * br.s_f, abs=1e-15)

    def test_zero_area_proposal_scores_low(self):
        br = score_components(Box(3, 3, 0, 4), Box(0, 0, 10, 10))
        assert br.c_f == 0 and br.c_c == 0

    def test_zero_area_gt_rejected(self):
        with pytest.raises(InvalidGroundTruth):
            score_components(Box(0, 0, 1, 1), Box(0, 0, 0, 5))

    @given(pos_boxes, pos_boxes, st.floats(0, 1))
    def test_final_in_unit_interval(self, p, g, w):
        assert 0.0 <= score_components(p, g, ScoringConfig(w=w)).s_final <= 1.0

    @given(pos_boxes, pos_boxes)
    def test_containment_geometry(self, p, g):
        outer = Box(min(p.x, g.x), min(p.y, g.y), max(p.x2, g.x2) - min(p.x, g.x), max(p.y2, g.y2) - min(p.y, g.y))
        assert score_components(outer, g).c_c == pytest.approx(1.0)
        assert score_components(g, outer).c_f == pytest.approx(1.0)

    def test_indices_match_raster_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(300):
            p = tuple(int(v) for v in (rng.integers(0, 30), rng.integers(0, 30), rng.integers(1, 20), rng.integers(1, 20)))
            g = tuple(int(v) for v in (rng.integers(0, 30), rng.integers(0, 30), rng.integers(1, 20), rng.integers(1, 20)))
            inter, area_p, area_g, _ = raster_counts(p, g, 50)
            br = score_components(Box(*p), Box(*g))
            assert br.c_c == pytest.approx(inter / area_g, abs=1e-9)
            assert br.c_f == pytest.approx(inter / area_p, abs=1e-9)


class TestGtScore:
    g = Box(0, 0, 10, 10)

    def test_no_gt(self):
        assert objectness_gt_score(Box(0, 0, 5, 5), []) == 0.0

    def test_single(self):
        assert objectness_gt_score(self.g, [self.g]) == pytest.approx(0.997529, abs=1e-6)

    def test_max_over_gts(self):
        far = Box(50, 50, 10, 10)
        assert objectness_gt_score(self.g, [far, self.g]) == pytest.approx(0.997529, abs=1e-6)

    def test_vectorized_agrees(self):
        rng = np.random.default_rng(9)
        props = [Box(*rng.uniform(0, 40, 2), *rng.uniform(0, 20, 2)) for _ in range(60)]
        gts = [Box(*rng.uniform(0, 40, 2), *rng.uniform(1, 20, 2)) for _ in range(4)]
        cfg = ScoringConfig(w=0.55)
        got = gt_scores_array(boxes_to_array(props), boxes_to_array(gts), cfg)
        expected = [objectness_gt_score(p, gts, cfg) for p in props]
        np.testing.assert_allclose(got, expected, atol=1e-12)

    def test_vectorized_empty_gt(self):
        got = gt_scores_array(boxes_to_array([Box(0, 0, 1, 1)]), boxes_to_array([]))
        assert got.tolist() == [0.0]

    @settings(max_examples=50)
    @given(st.lists(pos_boxes, min_size=1, max_size=5), pos_boxes)
    def test_monotone_in_gt_set(self, gts, p):
        assert objectness_gt_score(p, gts) >= objectness_gt_score(p, gts[:1]) - 1e-15
