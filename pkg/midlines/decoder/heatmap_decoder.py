"""Heatmap to oriented detections: threshold, 8-connected domains, regression lookup.

No NMS and no top-K cap: every connected domain becomes one detection; only
same-class duplicates across the two branches are merged.
"""
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from midlines import constants as C
from midlines.encoder.target_encoder import TargetMaps
from midlines.evaluation.rotated_iou import overlap_candidates, rotated_iou
from midlines.exception.exception import DegenerateBox, ShapeMismatch
from midlines.geometry.geometry_core import BranchId, MidlinePair, OrientedBox, Point2, midlines_to_box
from midlines.logging.logger import kv, logging

EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass
class Component:
    cells: List[Tuple[int, int]]
    score: float
    class_id: int = 0
    branch: BranchId = BranchId.ORIENTED

    def centroid(self) -> Tuple[float, float]:
        rows, cols = zip(*self.cells)
        return sum(rows) / len(rows), sum(cols) / len(cols)

    def lookup_cell(self) -> Tuple[int, int]:
        row, col = self.centroid()
        return math.floor(row + 0.5), math.floor(col + 0.5)


@dataclass(frozen=True)
class Detection:
    box: OrientedBox
    branch: BranchId

    @property
    def score(self) -> float:
        return self.box.score

    @property
    def class_id(self) -> int:
        return self.box.class_id


@dataclass
class DecodeDiagnostics:
    components: int = 0
    dropped_degenerate: int = 0
    merged: int = 0
    per_branch: Counter = field(default_factory=Counter)


def extract_components(channel: np.ndarray, threshold: float = C.THRESHOLD, class_id: int = 0,
                       branch: BranchId = BranchId.ORIENTED) -> List[Component]:
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    channel = np.asarray(channel, dtype=np.float64)
    labels, count = ndimage.label(channel > threshold, structure=EIGHT_CONNECTED)
    if count == 0:
        return []
    flat = labels.ravel()
    order = np.argsort(flat, kind="stable")
    sorted_labels = flat[order]
    starts = np.searchsorted(sorted_labels, np.arange(1, count + 1))
    ends = np.searchsorted(sorted_labels, np.arange(1, count + 1), side="right")
    maxima = ndimage.maximum(channel, labels, np.arange(1, count + 1))
    width = channel.shape[1]

    components = []
    for k in range(count):
        idx = order[starts[k]:ends[k]]  # raster order thanks to the stable sort
        cells = [(int(i) // width, int(i) % width) for i in idx]
        components.append(Component(cells, float(maxima[k]), class_id, BranchId(branch)))
    components.sort(key=lambda comp: comp.cells[0])
    return components


def component_to_detection(comp: Component, reg_maps: np.ndarray, stride: int,
                           cell: Optional[Tuple[int, int]] = None) -> Detection:
    """Reconstruct the box from the 8 regression channels at the component's lookup cell.

    reg_maps is the (8, H, W) regression grid of the component's branch; `cell`
    overrides the lookup cell.
    """
    height, width = reg_maps.shape[-2:]
    row, col = cell if cell is not None else comp.lookup_cell()
    row, col = min(max(row, 0), height - 1), min(max(col, 0), width - 1)
    q = Point2(float(col * stride), float(row * stride))
    d = reg_maps[:, row, col]
    ends = [Point2(q.x + float(d[2 * i]), q.y + float(d[2 * i + 1])) for i in range(4)]
    pair = MidlinePair.from_lines((ends[0], ends[1]), (ends[2], ends[3]), comp.branch)
    box = midlines_to_box(pair, class_id=comp.class_id, score=min(max(comp.score, 0.0), 1.0))
    return Detection(box, comp.branch)


def merge_branches(dets: Sequence[Detection], iou_threshold: float = C.MERGE_IOU) -> List[Detection]:
    """Drop the lower-scoring member of every same-class cross-branch pair above iou_threshold."""
    if not 0.0 < iou_threshold < 1.0:
        raise ValueError(f"iou_threshold must be in (0, 1), got {iou_threshold}")
    dets = list(dets)
    b1 = [i for i, d in enumerate(dets) if d.branch == BranchId.HORIZONTAL]
    b2 = [i for i, d in enumerate(dets) if d.branch == BranchId.ORIENTED]
    dropped = set()
    candidates = overlap_candidates([dets[i].box for i in b1], [dets[j].box for j in b2])
    for a, b in zip(*np.nonzero(candidates)):
        i, j = b1[a], b2[b]
        if dets[i].class_id != dets[j].class_id:
            continue
        if rotated_iou(dets[i].box, dets[j].box) <= iou_threshold:
            continue
        # ties keep the horizontal branch
        dropped.add(j if dets[i].score >= dets[j].score else i)
    return [d for k, d in enumerate(dets) if k not in dropped]


def check_prediction_maps(maps: TargetMaps):
    if maps.heatmap.ndim != 4 or maps.heatmap.shape[0] != 2:
        raise ShapeMismatch(f"heatmap must be (2, C, H, W), got {maps.heatmap.shape}")
    if maps.regression.shape != (2, C.REGRESSION_CHANNELS) + maps.heatmap.shape[2:]:
        raise ShapeMismatch(f"regression shape {maps.regression.shape} does not match heatmap {maps.heatmap.shape}")


def decode(maps: TargetMaps, threshold: float = C.THRESHOLD, iou_threshold: float = C.MERGE_IOU,
           diagnostics: Optional[DecodeDiagnostics] = None) -> List[Detection]:
    check_prediction_maps(maps)
    diag = diagnostics if diagnostics is not None else DecodeDiagnostics()
    dets: List[Detection] = []
    for b, branch in enumerate((BranchId.HORIZONTAL, BranchId.ORIENTED)):
        for class_id in range(maps.heatmap.shape[1]):
            for comp in extract_components(maps.heatmap[b, class_id], threshold, class_id, branch):
                diag.components += 1
                try:
                    dets.append(component_to_detection(comp, maps.regression[b], maps.stride))
                    diag.per_branch[int(branch)] += 1
                except (DegenerateBox, ValueError) as e:
                    diag.dropped_degenerate += 1
                    logging.warning(kv(event="drop_detection", branch=int(branch), class_id=class_id,
                                       cell=comp.lookup_cell(), reason=str(e)))
    merged = merge_branches(dets, iou_threshold)
    diag.merged = len(dets) - len(merged)
    logging.info(kv(event="decode", image_id=maps.image_id, components=diag.components,
                    detections=len(merged), dropped=diag.dropped_degenerate, merged=diag.merged))
    return merged
