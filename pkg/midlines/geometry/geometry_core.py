"""Oriented boxes, middle-line pairs and the exact conversions between them.

Coordinates are image pixels with y growing downward. A box's two middle lines
join the midpoints of opposite edges; their endpoint mean is the box centre.
"""
import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

from midlines import constants as C
from midlines.exception.exception import DegenerateBox


class BranchId(IntEnum):
    HORIZONTAL = 1
    ORIENTED = 2


@dataclass(frozen=True)
class Point2:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite point ({self.x}, {self.y})")

    def __add__(self, other: "Point2") -> "Point2":
        return Point2(self.x + other.x, self.y + other.y)

    def __sub__(self, other: "Point2") -> "Point2":
        return Point2(self.x - other.x, self.y - other.y)

    def scale(self, factor: float) -> "Point2":
        return Point2(self.x * factor, self.y * factor)

    def norm(self) -> float:
        return math.hypot(self.x, self.y)

    def as_tuple(self) -> Tuple[float, float]:
        return (self.x, self.y)


Line = Tuple[Point2, Point2]


def signed_area(points: Sequence[Point2]) -> float:
    """Shoelace area; positive for the normalized winding."""
    total = 0.0
    n = len(points)
    for i in range(n):
        a, b = points[i], points[(i + 1) % n]
        total += a.x * b.y - b.x * a.y
    return total / 2.0


def _orient(a: Point2, b: Point2, c: Point2) -> float:
    return (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)


def _segments_cross(a: Point2, b: Point2, c: Point2, d: Point2) -> bool:
    d1, d2 = _orient(c, d, a), _orient(c, d, b)
    d3, d4 = _orient(a, b, c), _orient(a, b, d)
    return d1 * d2 < 0 and d3 * d4 < 0


def _midpoint(a: Point2, b: Point2) -> Point2:
    return Point2((a.x + b.x) / 2.0, (a.y + b.y) / 2.0)


@dataclass(frozen=True)
class OrientedBox:
    corners: Tuple[Point2, Point2, Point2, Point2]
    class_id: int = 0
    score: float = 1.0
    difficult: bool = False

    def __post_init__(self):
        corners = tuple(p if isinstance(p, Point2) else Point2(*p) for p in self.corners)
        if len(corners) != 4:
            raise ValueError(f"an oriented box needs 4 corners, got {len(corners)}")
        if self.class_id < 0:
            raise ValueError(f"class_id must be >= 0, got {self.class_id}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")
        p0, p1, p2, p3 = corners
        if _segments_cross(p0, p1, p2, p3) or _segments_cross(p1, p2, p3, p0):
            raise DegenerateBox(f"self-intersecting quadrilateral {[p.as_tuple() for p in corners]}")
        area = signed_area(corners)
        if abs(area) <= C.MIN_AREA:
            raise DegenerateBox(f"zero-area quadrilateral {[p.as_tuple() for p in corners]}")
        if area < 0:
            corners = (p0, p3, p2, p1)
        object.__setattr__(self, "corners", corners)

    @classmethod
    def from_array(cls, coords: Iterable[float], class_id: int = 0, score: float = 1.0,
                   difficult: bool = False) -> "OrientedBox":
        flat = np.asarray(list(coords) if not isinstance(coords, np.ndarray) else coords,
                          dtype=np.float64).reshape(-1)
        if flat.size != 8:
            raise ValueError(f"expected 8 coordinates, got {flat.size}")
        pts = tuple(Point2(float(flat[2 * i]), float(flat[2 * i + 1])) for i in range(4))
        return cls(pts, class_id=class_id, score=score, difficult=difficult)

    @classmethod
    def from_rotated_rect(cls, cx: float, cy: float, width: float, height: float, angle_deg: float,
                          class_id: int = 0, score: float = 1.0, difficult: bool = False) -> "OrientedBox":
        t = math.radians(angle_deg)
        ux, uy = math.cos(t) * width / 2.0, math.sin(t) * width / 2.0
        vx, vy = -math.sin(t) * height / 2.0, math.cos(t) * height / 2.0
        pts = (
            Point2(cx - ux - vx, cy - uy - vy),
            Point2(cx + ux - vx, cy + uy - vy),
            Point2(cx + ux + vx, cy + uy + vy),
            Point2(cx - ux + vx, cy - uy + vy),
        )
        return cls(pts, class_id=class_id, score=score, difficult=difficult)

    def as_array(self) -> np.ndarray:
        return np.array([p.as_tuple() for p in self.corners], dtype=np.float64)

    def flat(self) -> list:
        return [c for p in self.corners for c in p.as_tuple()]

    @property
    def area(self) -> float:
        return abs(signed_area(self.corners))

    def centroid(self) -> Point2:
        return Point2(sum(p.x for p in self.corners) / 4.0, sum(p.y for p in self.corners) / 4.0)

    def min_side(self) -> float:
        return min((self.corners[i] - self.corners[(i + 1) % 4]).norm() for i in range(4))

    def is_convex(self) -> bool:
        signs = [_orient(self.corners[i], self.corners[(i + 1) % 4], self.corners[(i + 2) % 4])
                 for i in range(4)]
        return all(s >= 0 for s in signs) or all(s <= 0 for s in signs)

    def translated(self, dx: float, dy: float) -> "OrientedBox":
        return OrientedBox(tuple(Point2(p.x + dx, p.y + dy) for p in self.corners),
                           class_id=self.class_id, score=self.score, difficult=self.difficult)

    def with_score(self, score: float) -> "OrientedBox":
        return OrientedBox(self.corners, class_id=self.class_id, score=score, difficult=self.difficult)


def line_length(line: Line) -> float:
    return (line[0] - line[1]).norm()


def line_angle(line: Line) -> float:
    """Direction of the line against +x, in degrees within [0, 180)."""
    d = line[0] - line[1]
    angle = math.degrees(math.atan2(d.y, d.x)) % 180.0
    return 0.0 if angle >= 180.0 else angle


def verticality(line: Line) -> float:
    length = line_length(line)
    if length == 0.0:
        raise DegenerateBox("zero-length midline")
    return abs(line[0].y - line[1].y) / length


def _order_l1(line: Line) -> Line:
    a, b = line
    if a.x > b.x or (a.x == b.x and a.y <= b.y):
        return (a, b)
    return (b, a)


def _order_l2(line: Line) -> Line:
    a, b = line
    if a.y < b.y or (a.y == b.y and a.x >= b.x):
        return (a, b)
    return (b, a)


@dataclass(frozen=True)
class MidlinePair:
    l1: Line
    l2: Line
    branch: BranchId = field(default=BranchId.ORIENTED)

    def __post_init__(self):
        if line_length(self.l1) == 0.0 or line_length(self.l2) == 0.0:
            raise DegenerateBox("midline pair with zero-length line")
        if _order_l1(self.l1) != tuple(self.l1) or _order_l2(self.l2) != tuple(self.l2):
            raise ValueError("midline endpoints are not in canonical order")
        object.__setattr__(self, "l1", tuple(self.l1))
        object.__setattr__(self, "l2", tuple(self.l2))
        object.__setattr__(self, "branch", BranchId(self.branch))

    @classmethod
    def from_lines(cls, first: Line, second: Line, branch: BranchId) -> "MidlinePair":
        """Assign two unordered lines to L1/L2 for the branch and order their endpoints.

        Horizontal: the more vertical line (tie: first) is L2.
        Oriented: the longer line (tie: first) is L1.
        """
        if line_length(first) == 0.0 or line_length(second) == 0.0:
            raise DegenerateBox("zero-length midline")
        if BranchId(branch) == BranchId.HORIZONTAL:
            if verticality(first) >= verticality(second):
                l1, l2 = second, first
            else:
                l1, l2 = first, second
        else:
            if line_length(first) >= line_length(second):
                l1, l2 = first, second
            else:
                l1, l2 = second, first
        return cls(_order_l1(l1), _order_l2(l2), BranchId(branch))

    @property
    def endpoints(self) -> Tuple[Point2, Point2, Point2, Point2]:
        return (self.l1[0], self.l1[1], self.l2[0], self.l2[1])

    def lengths(self) -> Tuple[float, float]:
        return line_length(self.l1), line_length(self.l2)


def midline_candidates(box: OrientedBox) -> Tuple[Line, Line]:
    p0, p1, p2, p3 = box.corners
    a = (_midpoint(p0, p1), _midpoint(p2, p3))
    b = (_midpoint(p1, p2), _midpoint(p3, p0))
    if line_length(a) == 0.0 or line_length(b) == 0.0:
        raise DegenerateBox(f"box {box.flat()} has a zero-length midline")
    return a, b


def object_angle(box: OrientedBox) -> float:
    """Angle of the more vertical midline candidate (tie: candidate A)."""
    a, b = midline_candidates(box)
    return line_angle(a if verticality(a) >= verticality(b) else b)


def classify_branch(box: OrientedBox, branch_range: Tuple[float, float] = (C.BRANCH_LOW, C.BRANCH_HIGH)) -> BranchId:
    low, high = branch_range
    theta = object_angle(box)
    return BranchId.HORIZONTAL if low < theta < high else BranchId.ORIENTED


def box_to_midlines(box: OrientedBox, branch_range: Tuple[float, float] = (C.BRANCH_LOW, C.BRANCH_HIGH),
                    single_branch: bool = False) -> MidlinePair:
    a, b = midline_candidates(box)
    branch = BranchId.ORIENTED if single_branch else classify_branch(box, branch_range)
    return MidlinePair.from_lines(a, b, branch)


def intersection_point(pair: MidlinePair) -> Point2:
    pts = pair.endpoints
    return Point2(sum(p.x for p in pts) / 4.0, sum(p.y for p in pts) / 4.0)


def midlines_to_box(pair: MidlinePair, class_id: int = 0, score: float = 1.0,
                    difficult: bool = False) -> OrientedBox:
    c = intersection_point(pair)
    u = (pair.l1[0] - pair.l1[1]).scale(0.5)
    v = (pair.l2[0] - pair.l2[1]).scale(0.5)
    if u.norm() == 0.0 or v.norm() == 0.0:
        raise DegenerateBox("midline pair with zero half-vector")
    corners = (c + u + v, c + u - v, c - u - v, c - u + v)
    return OrientedBox(corners, class_id=class_id, score=score, difficult=difficult)


def true_intersection(pair: MidlinePair) -> Optional[Point2]:
    """Line-line intersection of L1 and L2 (None when parallel)."""
    (a, b), (c, d) = pair.l1, pair.l2
    r, s = b - a, d - c
    denom = r.x * s.y - r.y * s.x
    if denom == 0.0:
        return None
    t = ((c.x - a.x) * s.y - (c.y - a.y) * s.x) / denom
    return Point2(a.x + t * r.x, a.y + t * r.y)
