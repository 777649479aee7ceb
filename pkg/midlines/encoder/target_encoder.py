import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from midlines import constants as C
from midlines.exception.exception import DegenerateBox, OutOfBounds, ShapeMismatch, UnknownClass
from midlines.geometry.geometry_core import (
    BranchId,
    MidlinePair,
    OrientedBox,
    Point2,
    box_to_midlines,
    intersection_point,
)
from midlines.logging.logger import kv, logging

Cell = Tuple[int, int]


@dataclass
class TargetMaps:
    """Per-branch heatmaps and 8-channel regression maps at output stride.

    Axis 0 of every grid is the branch (index 0 = Horizontal, 1 = Oriented).
    Cell (row, col) sits at input-space point (col * stride, row * stride).
    """
    stride: int
    num_classes: int
    width: int
    height: int
    heatmap: np.ndarray
    regression: np.ndarray
    reg_mask: np.ndarray
    image_w: int = 0
    image_h: int = 0
    n_objects: int = 0
    class_names: List[str] = field(default_factory=list)
    image_id: str = ""
    owner: Optional[np.ndarray] = None
    regions: List["DriftRegion"] = field(default_factory=list)

    def __post_init__(self):
        expected = {
            "heatmap": (2, self.num_classes, self.height, self.width),
            "regression": (2, C.REGRESSION_CHANNELS, self.height, self.width),
            "reg_mask": (2, self.height, self.width),
        }
        for name, shape in expected.items():
            actual = tuple(getattr(self, name).shape)
            if actual != shape:
                raise ShapeMismatch(f"{name} has shape {actual}, expected {shape}")
        if not self.class_names:
            self.class_names = [str(i) for i in range(self.num_classes)]
        if len(self.class_names) != self.num_classes:
            raise ShapeMismatch(f"{len(self.class_names)} class names for {self.num_classes} classes")

    @classmethod
    def empty(cls, image_w: int, image_h: int, stride: int, num_classes: int, **kwargs) -> "TargetMaps":
        width, height = math.ceil(image_w / stride), math.ceil(image_h / stride)
        return cls(
            stride=stride,
            num_classes=num_classes,
            width=width,
            height=height,
            heatmap=np.zeros((2, num_classes, height, width), dtype=np.float64),
            regression=np.zeros((2, C.REGRESSION_CHANNELS, height, width), dtype=np.float64),
            reg_mask=np.zeros((2, height, width), dtype=bool),
            image_w=image_w,
            image_h=image_h,
            owner=np.full((2, height, width), -1, dtype=np.int64),
            **kwargs,
        )

    @property
    def n_for_loss(self) -> int:
        return max(self.n_objects, 1)

    def cell_center(self, row: int, col: int) -> Point2:
        return Point2(float(col * self.stride), float(row * self.stride))


@dataclass(frozen=True)
class DriftRegion:
    center: Point2
    radius: float
    object_index: int
    branch: BranchId = BranchId.ORIENTED

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("drift radius must be > 0")

    def center_cell(self, width: int, height: int) -> Cell:
        row = min(max(math.floor(self.center.y + 0.5), 0), height - 1)
        col = min(max(math.floor(self.center.x + 0.5), 0), width - 1)
        return row, col

    def cells(self, width: int, height: int) -> List[Cell]:
        """Grid cells strictly within radius of the centre, plus the rounded centre cell."""
        cx, cy, rad = self.center.x, self.center.y, self.radius
        r0, r1 = max(math.floor(cy - rad), 0), min(math.ceil(cy + rad), height - 1)
        c0, c1 = max(math.floor(cx - rad), 0), min(math.ceil(cx + rad), width - 1)
        out = set()
        if r0 <= r1 and c0 <= c1:
            rows, cols = np.mgrid[r0:r1 + 1, c0:c1 + 1]
            inside = (rows - cy) ** 2 + (cols - cx) ** 2 < rad * rad
            out.update(zip(rows[inside].tolist(), cols[inside].tolist()))
        out.add(self.center_cell(width, height))
        return sorted(out)


def drift_radius(pair: MidlinePair, stride: int, r: float = C.DRIFT_R) -> float:
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if r <= 0:
        raise ValueError(f"r must be > 0, got {r}")
    l1, l2 = pair.lengths()
    radius = min(r / stride, min(l1, l2) / (2.0 * stride))
    return max(radius, C.MIN_DRIFT_RADIUS)


def regression_targets(pair: MidlinePair, q: Point2) -> np.ndarray:
    """Offsets (dx1, dy1, ..., dx4, dy4) from point q to the four endpoints."""
    return np.array([c for p in pair.endpoints for c in (p.x - q.x, p.y - q.y)], dtype=np.float64)


def resolve_overlap(cell: Cell, candidates: Sequence[int], annotations: Sequence[OrientedBox]) -> int:
    """Pick the owner of a cell claimed by several drift regions: smallest area, then lowest index."""
    if not candidates:
        raise ValueError(f"no candidates for cell {cell}")
    return min(candidates, key=lambda idx: (annotations[idx].area, idx))


def encode_image(annotations: Sequence[OrientedBox], image_w: int, image_h: int,
                 stride: int = C.STRIDE, num_classes: int = 1, r: float = C.DRIFT_R,
                 class_names: Optional[List[str]] = None,
                 branch_range: Tuple[float, float] = (C.BRANCH_LOW, C.BRANCH_HIGH),
                 single_branch: bool = False, image_id: str = "") -> TargetMaps:
    maps = TargetMaps.empty(image_w, image_h, stride, num_classes,
                            class_names=list(class_names or []), image_id=image_id)
    claims: Dict[Tuple[int, int, int], List[int]] = defaultdict(list)
    pairs: Dict[int, MidlinePair] = {}

    for idx, box in enumerate(annotations):
        if box.class_id >= num_classes:
            raise UnknownClass(f"class_id {box.class_id} outside vocabulary of {num_classes}",
                               classes=[box.class_id])
        try:
            pair = box_to_midlines(box, branch_range, single_branch=single_branch)
        except DegenerateBox as e:
            logging.warning(kv(event="skip_degenerate", image_id=image_id, object=idx, reason=e.error_message))
            continue
        centre = intersection_point(pair)
        if not (0.0 <= centre.x <= image_w and 0.0 <= centre.y <= image_h):
            raise OutOfBounds(f"object {idx} centre ({centre.x}, {centre.y}) outside {image_w}x{image_h}")

        region = DriftRegion(Point2(centre.x / stride, centre.y / stride),
                             drift_radius(pair, stride, r), idx, pair.branch)
        maps.regions.append(region)
        pairs[idx] = pair
        b = int(pair.branch) - 1
        for row, col in region.cells(maps.width, maps.height):
            maps.heatmap[b, box.class_id, row, col] = 1.0
            claims[(b, row, col)].append(idx)

    for (b, row, col), candidates in claims.items():
        winner = resolve_overlap((row, col), candidates, annotations)
        maps.regression[b, :, row, col] = regression_targets(pairs[winner], maps.cell_center(row, col))
        maps.reg_mask[b, row, col] = True
        maps.owner[b, row, col] = winner

    maps.n_objects = len(pairs)
    logging.info(kv(event="encode", image_id=image_id, objects=maps.n_objects,
                    positives=int(maps.reg_mask.sum()), width=maps.width, height=maps.height))
    return maps
