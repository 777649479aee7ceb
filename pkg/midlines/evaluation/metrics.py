from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from midlines import constants as C
from midlines.config.run_config import APMode
from midlines.decoder.heatmap_decoder import Detection
from midlines.evaluation.rotated_iou import iou_matrix
from midlines.exception.exception import UnknownClass
from midlines.geometry.geometry_core import OrientedBox
from midlines.ingest.annotation_parser import AnnotatedImage
from midlines.logging.logger import kv, logging

MODES = ("map", "text")


@dataclass
class MatchResult:
    flags: List[bool]     # TP (True) / FP (False) per scored detection, in score order
    scores: List[float]
    fn: int
    ignored: int = 0      # detections landing on difficult ground truth


@dataclass
class ClassCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    n_gt: int = 0


@dataclass
class EvalReport:
    mode: str
    iou_threshold: float
    per_class_ap: Dict[str, float] = field(default_factory=dict)
    map_score: float = 0.0
    precision: Optional[float] = None
    recall: Optional[float] = None
    f1: Optional[float] = None
    counts: Dict[str, ClassCounts] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "iou_threshold": self.iou_threshold,
            "per_class_ap": dict(self.per_class_ap),
            "map": self.map_score,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "counts": {name: vars(c).copy() for name, c in self.counts.items()},
        }

    def to_frame(self) -> pd.DataFrame:
        rows = [{"class": name, "gt": c.n_gt, "tp": c.tp, "fp": c.fp, "fn": c.fn,
                 "ap": self.per_class_ap.get(name, float("nan"))}
                for name, c in self.counts.items()]
        return pd.DataFrame(rows, columns=["class", "gt", "tp", "fp", "fn", "ap"])

    def to_table(self) -> str:
        frame = self.to_frame()
        lines = [frame.to_string(index=False, float_format=lambda v: f"{v:.4f}")]
        if self.mode == "text":
            summary = pd.DataFrame([{"recall": self.recall, "precision": self.precision, "f1": self.f1}])
        else:
            summary = pd.DataFrame([{"mAP": self.map_score}])
        lines.append(summary.to_string(index=False, float_format=lambda v: f"{v:.4f}"))
        return "\n\n".join(lines)


def match_detections(dets: Sequence[Detection], gts: Sequence[OrientedBox],
                     iou_threshold: float = C.EVAL_IOU) -> MatchResult:
    """Greedy matching of one class within one image, highest score first."""
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    ious = iou_matrix([dets[i].box for i in order], list(gts))
    difficult = np.array([g.difficult for g in gts], dtype=bool)
    matched = np.zeros(len(gts), dtype=bool)
    flags, scores, ignored = [], [], 0
    for row, i in enumerate(order):
        best, best_iou = -1, -1.0
        for j in range(len(gts)):
            if matched[j] and not difficult[j]:
                continue
            if ious[row, j] > best_iou:
                best, best_iou = j, ious[row, j]
        if best >= 0 and best_iou >= iou_threshold:
            if difficult[best]:
                ignored += 1
                continue
            matched[best] = True
            flags.append(True)
        else:
            flags.append(False)
        scores.append(dets[i].score)
    fn = int(np.sum(~matched & ~difficult))
    return MatchResult(flags, scores, fn, ignored)


def average_precision(flags: Sequence[bool], scores: Sequence[float], n_gt: int,
                      ap_mode: APMode = APMode.ALL_POINT) -> Optional[float]:
    """Area under the interpolated precision-recall curve.

    Returns None when the class has neither ground truth nor detections.
    """
    if n_gt == 0:
        return 0.0 if len(flags) else None
    if not len(flags):
        return 0.0
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    tp = np.asarray(flags, dtype=np.float64)[order]
    tp_cum, fp_cum = np.cumsum(tp), np.cumsum(1.0 - tp)
    recall = tp_cum / n_gt
    precision = tp_cum / (tp_cum + fp_cum)

    if APMode(ap_mode) == APMode.ELEVEN_POINT:
        ap = 0.0
        for t in np.linspace(0.0, 1.0, 11):
            above = precision[recall >= t - 1e-12]
            ap += (above.max() if above.size else 0.0) / 11.0
        return float(ap)

    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.nonzero(mrec[1:] != mrec[:-1])[0] + 1
    return float(np.sum((mrec[steps] - mrec[steps - 1]) * mpre[steps]))


def _f1(p: float, r: float) -> float:
    return 2.0 * p * r / (p + r) if p + r > 0 else 0.0


def evaluate(dets: Mapping[str, Sequence[Detection]], gts: Sequence[AnnotatedImage],
             class_names: Sequence[str], mode: str = "map", iou_threshold: float = C.EVAL_IOU,
             ap_mode: APMode = APMode.ALL_POINT) -> EvalReport:
    """Evaluate detections keyed by image_id against ground-truth images."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    n_classes = len(class_names)
    unknown = [d.class_id for ds in dets.values() for d in ds if d.class_id >= n_classes]
    unknown += [o.class_id for img in gts for o in img.objects if o.class_id >= n_classes]
    if unknown:
        raise UnknownClass(f"class ids {sorted(set(unknown))} outside vocabulary of {n_classes}", classes=unknown)
    gt_ids = {img.image_id for img in gts}
    stray = [key for key in dets if key not in gt_ids]
    if stray:
        logging.warning(kv(event="unmatched_images", images=",".join(sorted(stray))))

    report = EvalReport(mode=mode, iou_threshold=iou_threshold)
    ap_values = []
    for class_id, name in enumerate(class_names):
        counts = ClassCounts()
        flags, scores = [], []
        for img in gts:
            cls_gts = [o for o in img.objects if o.class_id == class_id]
            cls_dets = [d for d in dets.get(img.image_id, ()) if d.class_id == class_id]
            result = match_detections(cls_dets, cls_gts, iou_threshold)
            flags += result.flags
            scores += result.scores
            counts.fn += result.fn
            counts.n_gt += sum(1 for o in cls_gts if not o.difficult)
        for key in stray:
            extra = [d.score for d in dets[key] if d.class_id == class_id]
            flags += [False] * len(extra)
            scores += extra
        counts.tp = int(sum(flags))
        counts.fp = len(flags) - counts.tp
        ap = average_precision(flags, scores, counts.n_gt, ap_mode)
        if ap is None:
            continue
        report.per_class_ap[name] = ap
        report.counts[name] = counts
        ap_values.append(ap)

    report.map_score = float(np.mean(ap_values)) if ap_values else 0.0
    if mode == "text":
        tp = sum(c.tp for c in report.counts.values())
        fp = sum(c.fp for c in report.counts.values())
        fn = sum(c.fn for c in report.counts.values())
        report.precision = tp / (tp + fp) if tp + fp else 0.0
        report.recall = tp / (tp + fn) if tp + fn else 0.0
        report.f1 = _f1(report.precision, report.recall)
    logging.info(kv(event="evaluate", mode=mode, classes=len(report.per_class_ap),
                    map=f"{report.map_score:.4f}", f1=report.f1))
    return report
