import math

import numpy as np
import pytest

from conftest import random_rectangles, vertex_deviation
from midlines.exception.exception import DegenerateBox
from midlines.geometry.geometry_core import (
    BranchId,
    MidlinePair,
    OrientedBox,
    Point2,
    box_to_midlines,
    classify_branch,
    intersection_point,
    midline_candidates,
    midlines_to_box,
    object_angle,
    signed_area,
    true_intersection,
)


def P(x, y):
    return Point2(float(x), float(y))


def test_point_rejects_non_finite():
    with pytest.raises(ValueError):
        Point2(float("nan"), 0.0)


def test_box_keeps_positive_winding(axis_box):
    assert signed_area(axis_box.corners) > 0
    assert axis_box.corners[0] == P(70, 80)
    assert axis_box.area == pytest.approx(2400.0)


def test_box_reorders_negative_winding():
    box = OrientedBox.from_array([70, 80, 70, 120, 130, 120, 130, 80])
    assert box.corners == (P(70, 80), P(130, 80), P(130, 120), P(70, 120))
    assert signed_area(box.corners) > 0


@pytest.mark.parametrize("coords", [
    [0, 0, 10, 0, 20, 0, 30, 0],          # collinear
    [0, 0, 10, 10, 10, 0, 0, 10],         # bow-tie
    [5, 5, 5, 5, 5, 5, 5, 5],
])
def test_degenerate_boxes(coords):
    with pytest.raises(DegenerateBox):
        OrientedBox.from_array(coords)


def test_box_validates_fields():
    with pytest.raises(ValueError):
        OrientedBox.from_array([0, 0, 1, 0, 1, 1, 0, 1], score=1.5)
    with pytest.raises(ValueError):
        OrientedBox.from_array([0, 0, 1, 0, 1, 1, 0, 1], class_id=-1)
    with pytest.raises(ValueError):
        OrientedBox.from_array([0, 0, 1, 0, 1, 1])


def test_classify_axis_aligned_is_horizontal(axis_box):
    assert object_angle(axis_box) == pytest.approx(90.0)
    assert classify_branch(axis_box) == BranchId.HORIZONTAL


def test_classify_diamond_is_oriented(diamond_box):
    assert classify_branch(diamond_box) == BranchId.ORIENTED


def test_branch_window_is_open(axis_box):
    # the object sits at exactly 90 degrees; an open window starting there excludes it
    assert classify_branch(axis_box, (90.0, 92.0)) == BranchId.ORIENTED
    assert classify_branch(axis_box, (88.0, 90.0)) == BranchId.ORIENTED
    assert classify_branch(axis_box, (89.0, 91.0)) == BranchId.HORIZONTAL


def test_box_to_midlines_axis_aligned(axis_box):
    pair = box_to_midlines(axis_box)
    assert pair.branch == BranchId.HORIZONTAL
    assert pair.l1 == (P(130, 100), P(70, 100))
    assert pair.l2 == (P(100, 80), P(100, 120))


def test_box_to_midlines_diamond_tie(diamond_box):
    a, b = midline_candidates(diamond_box)
    assert set(a) == {P(120, 80), P(80, 120)}
    assert set(b) == {P(120, 120), P(80, 80)}
    pair = box_to_midlines(diamond_box)
    assert pair.branch == BranchId.ORIENTED
    assert pair.l1 == (P(120, 80), P(80, 120))
    assert pair.l2 == (P(80, 80), P(120, 120))


def test_single_branch_routes_to_oriented(axis_box):
    assert box_to_midlines(axis_box, single_branch=True).branch == BranchId.ORIENTED


def test_intersection_point_examples():
    pair = MidlinePair((P(130, 100), P(70, 100)), (P(100, 80), P(100, 120)), BranchId.HORIZONTAL)
    assert intersection_point(pair) == P(100, 100)
    pair = MidlinePair((P(120, 80), P(80, 120)), (P(80, 80), P(120, 120)))
    assert intersection_point(pair) == P(100, 100)
    pair = MidlinePair((P(3, 1), P(-3, -1)), (P(1, -4), P(-1, 4)))
    assert intersection_point(pair) == P(0, 0)


def test_midline_pair_rejects_bad_order():
    with pytest.raises(ValueError):
        MidlinePair((P(70, 100), P(130, 100)), (P(100, 80), P(100, 120)))
    with pytest.raises(DegenerateBox):
        MidlinePair((P(5, 5), P(5, 5)), (P(5, 4), P(5, 6)))


def test_midlines_to_box_rectangle():
    pair = MidlinePair((P(130, 100), P(70, 100)), (P(100, 80), P(100, 120)), BranchId.HORIZONTAL)
    box = midlines_to_box(pair)
    assert set(box.corners) == {P(130, 80), P(130, 120), P(70, 120), P(70, 80)}


def test_midlines_to_box_parallelogram():
    pair = MidlinePair((P(10, 0), P(-10, 0)), (P(2, -5), P(-2, 5)))
    box = midlines_to_box(pair)
    assert set(box.corners) == {P(12, -5), P(8, 5), P(-12, 5), P(-8, -5)}


def test_centroid_matches_intersection(rng):
    for box in random_rectangles(rng, 200):
        c, q = box.centroid(), intersection_point(box_to_midlines(box))
        assert math.hypot(c.x - q.x, c.y - q.y) < 1e-9


def test_round_trip_random_rectangles(rng):
    for box in random_rectangles(rng, 10_000):
        pair = box_to_midlines(box)
        assert pair.l1[0].x >= pair.l1[1].x
        assert pair.l2[0].y <= pair.l2[1].y
        assert vertex_deviation(midlines_to_box(pair), box) < 1e-9


def test_true_intersection_coincides_for_rectangles(rng):
    for box in random_rectangles(rng, 200):
        pair = box_to_midlines(box)
        q, t = intersection_point(pair), true_intersection(pair)
        assert t is not None
        assert math.hypot(q.x - t.x, q.y - t.y) < 1e-9


def test_branches_partition_angles():
    for angle in np.arange(0.0, 180.0, 0.5):
        box = OrientedBox.from_rotated_rect(200, 200, 60, 30, angle)
        assert classify_branch(box) in (BranchId.HORIZONTAL, BranchId.ORIENTED)
