from typing import List, Sequence, Tuple

import numpy as np

from midlines import constants as C
from midlines.exception.exception import NonConvexInput
from midlines.geometry.geometry_core import OrientedBox

Vertex = Tuple[float, float]


def polygon_area(poly: Sequence[Vertex]) -> float:
    n = len(poly)
    area = 0.0
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        area += x1 * y2 - x2 * y1
    return area / 2.0


def _cross(o: Vertex, a: Vertex, p: Vertex) -> float:
    return (a[0] - o[0]) * (p[1] - o[1]) - (a[1] - o[1]) * (p[0] - o[0])


def _line_intersection(s: Vertex, e: Vertex, cp1: Vertex, cp2: Vertex) -> Vertex:
    dcx, dcy = cp1[0] - cp2[0], cp1[1] - cp2[1]
    dpx, dpy = s[0] - e[0], s[1] - e[1]
    n1 = cp1[0] * cp2[1] - cp1[1] * cp2[0]
    n2 = s[0] * e[1] - s[1] * e[0]
    n3 = 1.0 / (dcx * dpy - dcy * dpx)
    return ((n1 * dpx - n2 * dcx) * n3, (n1 * dpy - n2 * dcy) * n3)


def clip_polygon(subject: Sequence[Vertex], clipper: Sequence[Vertex]) -> List[Vertex]:
    """Sutherland-Hodgman clipping of subject by a convex clipper with positive signed area."""
    output = list(subject)
    cp1 = clipper[-1]
    for cp2 in clipper:
        if not output:
            break
        inputs, output = output, []
        s = inputs[-1]
        s_in = _cross(cp1, cp2, s) >= 0.0
        for e in inputs:
            e_in = _cross(cp1, cp2, e) >= 0.0
            if e_in:
                if not s_in:
                    output.append(_line_intersection(s, e, cp1, cp2))
                output.append(e)
            elif s_in:
                output.append(_line_intersection(s, e, cp1, cp2))
            s, s_in = e, e_in
        cp1 = cp2
    return output


def _vertices(box: OrientedBox) -> List[Vertex]:
    if not box.is_convex():
        raise NonConvexInput(f"rotated IoU needs convex quadrilaterals, got {box.flat()}")
    return [p.as_tuple() for p in box.corners]


def intersection_area(a: OrientedBox, b: OrientedBox) -> float:
    inter = clip_polygon(_vertices(a), _vertices(b))
    if len(inter) < 3:
        return 0.0
    area = abs(polygon_area(inter))
    return area if area >= C.MIN_AREA else 0.0


def rotated_iou(a: OrientedBox, b: OrientedBox) -> float:
    inter = intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    union = a.area + b.area - inter
    return float(min(max(inter / union, 0.0), 1.0))


def bounds(boxes: Sequence[OrientedBox]) -> np.ndarray:
    """Axis-aligned extents (xmin, ymin, xmax, ymax) per box."""
    if not boxes:
        return np.zeros((0, 4), dtype=np.float64)
    pts = np.stack([b.as_array() for b in boxes])
    return np.concatenate([pts.min(axis=1), pts.max(axis=1)], axis=1)


def overlap_candidates(a: Sequence[OrientedBox], b: Sequence[OrientedBox]) -> np.ndarray:
    """Boolean (len(a), len(b)) matrix of pairs whose axis-aligned extents overlap."""
    ba, bb = bounds(a), bounds(b)
    if not len(ba) or not len(bb):
        return np.zeros((len(ba), len(bb)), dtype=bool)
    return ((ba[:, None, 0] < bb[None, :, 2]) & (bb[None, :, 0] < ba[:, None, 2])
            & (ba[:, None, 1] < bb[None, :, 3]) & (bb[None, :, 1] < ba[:, None, 3]))


def iou_matrix(a: Sequence[OrientedBox], b: Sequence[OrientedBox]) -> np.ndarray:
    out = np.zeros((len(a), len(b)), dtype=np.float64)
    for i, j in zip(*np.nonzero(overlap_candidates(a, b))):
        out[i, j] = rotated_iou(a[i], b[j])
    return out
