import numpy as np
import pytest

from midlines.encoder.target_encoder import (
    DriftRegion,
    TargetMaps,
    drift_radius,
    encode_image,
    regression_targets,
    resolve_overlap,
)
from midlines.exception.exception import OutOfBounds, ShapeMismatch, UnknownClass
from midlines.geometry.geometry_core import BranchId, MidlinePair, OrientedBox, Point2, box_to_midlines


def P(x, y):
    return Point2(float(x), float(y))


def pair_with_lengths(l1, l2):
    return MidlinePair((P(100 + l1 / 2, 100), P(100 - l1 / 2, 100)), (P(100, 100 - l2 / 2), P(100, 100 + l2 / 2)))


def disc_size(radius):
    r = int(np.ceil(radius))
    return sum(1 for dy in range(-r, r + 1) for dx in range(-r, r + 1) if dx * dx + dy * dy < radius * radius)


@pytest.mark.parametrize("l1,l2,expected", [(200, 100, 4.0), (128, 128, 4.0), (200, 4, 0.75)])
def test_drift_radius(l1, l2, expected):
    assert drift_radius(pair_with_lengths(l1, l2), stride=4, r=16) == pytest.approx(expected)


def test_drift_radius_rejects_bad_arguments():
    with pytest.raises(ValueError):
        drift_radius(pair_with_lengths(10, 10), stride=0)
    with pytest.raises(ValueError):
        drift_radius(pair_with_lengths(10, 10), stride=4, r=0)


def test_tiny_region_still_holds_centre_cell():
    region = DriftRegion(P(10.5, 7.5), 0.75, 0)
    cells = region.cells(40, 40)
    assert (8, 11) in cells
    assert region.center_cell(40, 40) == (8, 11)


def test_region_is_clipped_to_grid():
    region = DriftRegion(P(0.0, 0.0), 4.0, 0)
    cells = region.cells(10, 10)
    assert all(0 <= r < 10 and 0 <= c < 10 for r, c in cells)
    assert len(cells) == sum(1 for r in range(4) for c in range(4) if r * r + c * c < 16)


def test_encode_single_axis_box(axis_box):
    maps = encode_image([axis_box], 200, 200, stride=4, num_classes=1)
    assert (maps.width, maps.height) == (50, 50)
    assert maps.heatmap[1].sum() == 0
    assert maps.heatmap[0, 0].sum() == disc_size(4.0) == 45
    assert maps.heatmap[0, 0, 25, 25] == 1.0
    np.testing.assert_allclose(maps.regression[0, :, 25, 25], [30, 0, -30, 0, 0, -20, 0, 20])
    assert maps.n_objects == 1
    assert len(maps.regions) == 1


def test_encode_empty():
    maps = encode_image([], 64, 48, stride=4, num_classes=3)
    assert maps.heatmap.shape == (2, 3, 12, 16)
    assert not maps.heatmap.any()
    assert not maps.reg_mask.any()
    assert maps.n_for_loss == 1


def test_two_objects_two_classes():
    a = OrientedBox.from_rotated_rect(60, 60, 60, 40, 0, class_id=0)
    b = OrientedBox.from_rotated_rect(200, 200, 60, 40, 30, class_id=1)
    maps = encode_image([a, b], 300, 300, stride=4, num_classes=2)
    for idx, region in enumerate(maps.regions):
        b_idx = int(region.branch) - 1
        cls = [a, b][idx].class_id
        assert maps.heatmap[b_idx, cls].sum() == len(region.cells(maps.width, maps.height))
    assert maps.heatmap[0, 1].sum() == 0
    assert maps.heatmap[1, 0].sum() == 0


def test_every_drift_cell_regresses_exact_endpoints(rng):
    box = OrientedBox.from_rotated_rect(150, 130, 120, 50, 33)
    pair = box_to_midlines(box)
    maps = encode_image([box], 300, 300, stride=4, num_classes=1)
    b = int(pair.branch) - 1
    rows, cols = np.nonzero(maps.reg_mask[b])
    assert rows.size > 1
    for row, col in zip(rows, cols):
        q = maps.cell_center(row, col)
        got = maps.regression[b, :, row, col]
        for i, ep in enumerate(pair.endpoints):
            assert q.x + got[2 * i] == pytest.approx(ep.x, abs=1e-9)
            assert q.y + got[2 * i + 1] == pytest.approx(ep.y, abs=1e-9)


def test_mask_matches_heatmap(rng):
    boxes = [OrientedBox.from_rotated_rect(x, y, 50, 30, a, class_id=k % 3)
             for k, (x, y, a) in enumerate([(60, 60, 0), (70, 80, 45), (200, 100, 90), (150, 220, 10)])]
    maps = encode_image(boxes, 300, 300, stride=4, num_classes=3)
    np.testing.assert_array_equal(maps.reg_mask, maps.heatmap.max(axis=1) == 1.0)
    assert np.isfinite(maps.regression[np.broadcast_to(maps.reg_mask[:, None], maps.regression.shape)]).all()
    assert maps.n_objects == len(maps.regions) == 4


def test_overlap_goes_to_smaller_object():
    big = OrientedBox.from_rotated_rect(100, 100, 120, 80, 0, class_id=0)
    small = OrientedBox.from_rotated_rect(104, 100, 60, 40, 0, class_id=1)
    maps = encode_image([big, small], 200, 200, stride=4, num_classes=2)
    shared = (maps.owner[0] >= 0) & (maps.heatmap[0, 0] == 1.0) & (maps.heatmap[0, 1] == 1.0)
    assert shared.any()
    assert (maps.owner[0][shared] == 1).all()
    row, col = np.argwhere(shared)[0]
    np.testing.assert_allclose(maps.regression[0, :, row, col],
                               regression_targets(box_to_midlines(small), maps.cell_center(row, col)))


def test_resolve_overlap_rules():
    a = OrientedBox.from_rotated_rect(50, 50, 40, 30, 0)   # area 1200
    b = OrientedBox.from_rotated_rect(50, 50, 40, 20, 0)   # area 800
    assert resolve_overlap((0, 0), [0, 1], [a, b]) == 1
    assert resolve_overlap((0, 0), [0], [a, b]) == 0
    boxes = [a] * 8
    assert resolve_overlap((0, 0), [7, 3], boxes) == 3


def test_single_branch_encoding(axis_box):
    maps = encode_image([axis_box], 200, 200, num_classes=1, single_branch=True)
    assert maps.heatmap[0].sum() == 0
    assert maps.heatmap[1].sum() > 0


def test_encode_errors(axis_box):
    with pytest.raises(UnknownClass):
        encode_image([OrientedBox.from_rotated_rect(50, 50, 20, 20, 0, class_id=2)], 100, 100, num_classes=2)
    with pytest.raises(OutOfBounds):
        encode_image([OrientedBox.from_rotated_rect(300, 300, 20, 20, 0)], 200, 200, num_classes=1)


def test_target_maps_shape_check():
    with pytest.raises(ShapeMismatch):
        TargetMaps(stride=4, num_classes=1, width=4, height=4, heatmap=np.zeros((2, 1, 4, 4)),
                   regression=np.zeros((2, 8, 4, 5)), reg_mask=np.zeros((2, 4, 4), dtype=bool))


def test_branch_exclusivity(rng):
    boxes = [OrientedBox.from_rotated_rect(150, 150, 80, 40, float(a)) for a in rng.uniform(0, 180, 20)]
    for box in boxes:
        maps = encode_image([box], 300, 300, num_classes=1)
        per_branch = maps.reg_mask.reshape(2, -1).any(axis=1)
        assert per_branch.sum() == 1
        assert per_branch[int(box_to_midlines(box).branch) - 1]
