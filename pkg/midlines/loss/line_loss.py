"""Intersection-point focal loss and the three-part Line Loss, with analytic gradients.

Regression grids carry the 8 offset channels on axis -3
(dx1, dy1, dx2, dy2 for L1 then dx3, dy3, dx4, dy4 for L2); masks drop that axis.
"""
from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from midlines import constants as C
from midlines.config.run_config import LossWeights
from midlines.exception.exception import NonBinaryGroundTruth, ShapeMismatch
from midlines.logging.logger import logging

ANCHORS = ("intersection", "cell")

# (ep1, ep2) endpoint indices of each line
LINE_ENDPOINTS = ((0, 1), (2, 3))


@dataclass
class LossValue:
    total: float
    ip: float = 0.0
    l1: float = 0.0
    l2: float = 0.0
    l3: float = 0.0
    line: float = 0.0
    gamma: float = 1.0
    gradients: Dict[str, np.ndarray] = field(default_factory=dict)

    def decomposition_error(self) -> float:
        """Relative gap between total and ip + gamma * line."""
        expected = self.ip + self.gamma * self.line
        return abs(self.total - expected) / max(abs(expected), 1e-300)


def smooth_l1_array(diff: np.ndarray, kink: float = C.SMOOTH_L1_KINK) -> Tuple[np.ndarray, np.ndarray]:
    """Element-wise smooth-L1 of diff and its derivative."""
    diff = np.asarray(diff, dtype=np.float64)
    absd = np.abs(diff)
    quadratic = absd < kink
    value = np.where(quadratic, 0.5 * diff * diff / kink, absd - 0.5 * kink)
    deriv = np.where(quadratic, diff / kink, np.sign(diff))
    return value, deriv


def smooth_l1(pred: float, target: float) -> Tuple[float, float]:
    value, deriv = smooth_l1_array(np.float64(pred) - np.float64(target))
    return float(value), float(deriv)


def _check_shapes(**arrays):
    items = list(arrays.items())
    name0, ref = items[0]
    for name, arr in items[1:]:
        if np.shape(arr) != np.shape(ref):
            raise ShapeMismatch(f"{name} shape {np.shape(arr)} != {name0} shape {np.shape(ref)}")


def _check_reg(pred_reg: np.ndarray, mask: np.ndarray):
    if pred_reg.ndim < 3 or pred_reg.shape[-3] != C.REGRESSION_CHANNELS:
        raise ShapeMismatch(f"regression grid needs {C.REGRESSION_CHANNELS} channels on axis -3, got {pred_reg.shape}")
    expected = pred_reg.shape[:-3] + pred_reg.shape[-2:]
    if mask.shape != expected:
        raise ShapeMismatch(f"mask shape {mask.shape} != {expected}")


def focal_ip_loss(pred_hm: np.ndarray, gt_hm: np.ndarray, n_objects: int,
                  alpha_focal: float = C.ALPHA_FOCAL) -> Tuple[float, np.ndarray]:
    pred_hm = np.asarray(pred_hm, dtype=np.float64)
    gt_hm = np.asarray(gt_hm, dtype=np.float64)
    _check_shapes(pred_hm=pred_hm, gt_hm=gt_hm)
    if not np.all((gt_hm == 0.0) | (gt_hm == 1.0)):
        raise NonBinaryGroundTruth("ground-truth heatmap must hold only 0 and 1")
    n = max(int(n_objects), 1)
    eps = C.PROB_EPS
    p = np.clip(pred_hm, eps, 1.0 - eps)
    inside = (pred_hm > eps) & (pred_hm < 1.0 - eps)
    pos = gt_hm == 1.0
    a = alpha_focal

    log_p, log_q = np.log(p), np.log1p(-p)
    pos_term = (1.0 - p) ** a * log_p
    neg_term = p ** a * log_q
    loss = -(np.sum(pos_term[pos]) + np.sum(neg_term[~pos])) / n

    d_pos = -a * (1.0 - p) ** (a - 1.0) * log_p + (1.0 - p) ** a / p
    d_neg = a * p ** (a - 1.0) * log_q - p ** a / (1.0 - p)
    grad = -np.where(pos, d_pos, d_neg) * inside / n
    return float(loss), grad


def endpoint_loss(pred_reg: np.ndarray, target_reg: np.ndarray, mask: np.ndarray,
                  n_objects: int) -> Tuple[float, np.ndarray]:
    pred_reg = np.asarray(pred_reg, dtype=np.float64)
    target_reg = np.asarray(target_reg, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    _check_shapes(pred_reg=pred_reg, target_reg=target_reg)
    _check_reg(pred_reg, mask)
    n = max(int(n_objects), 1)
    m = np.expand_dims(mask, -3)
    value, deriv = smooth_l1_array(pred_reg - target_reg)
    return float(np.sum(value * m) / n), deriv * m / n


def _split_xy(pred_reg: np.ndarray, anchor: str) -> Tuple[np.ndarray, np.ndarray]:
    """Endpoint vectors (4, ...) measured from the cell or from the predicted intersection."""
    if anchor not in ANCHORS:
        raise ValueError(f"anchor must be one of {ANCHORS}, got {anchor!r}")
    xs = np.moveaxis(pred_reg[..., 0::2, :, :], -3, 0)
    ys = np.moveaxis(pred_reg[..., 1::2, :, :], -3, 0)
    if anchor == "intersection":
        xs = xs - xs.mean(axis=0, keepdims=True)
        ys = ys - ys.mean(axis=0, keepdims=True)
    return xs, ys


def _merge_xy(gx: np.ndarray, gy: np.ndarray, anchor: str) -> np.ndarray:
    """Chain the endpoint-vector gradients back onto the raw offset channels."""
    if anchor == "intersection":
        gx = gx - gx.mean(axis=0, keepdims=True)
        gy = gy - gy.mean(axis=0, keepdims=True)
    out = np.empty((C.REGRESSION_CHANNELS,) + gx.shape[1:], dtype=np.float64)
    out[0::2], out[1::2] = gx, gy
    return np.moveaxis(out, 0, -3)


def collinear_term(ep1: Tuple[float, float], ep2: Tuple[float, float]) -> float:
    """Collinearity penalty of one line given its endpoint vectors from the intersection point."""
    return smooth_l1(ep1[0] * ep2[1], ep2[0] * ep1[1])[0]


def vertical_term(ep1_l1: Tuple[float, float], ep1_l2: Tuple[float, float]) -> float:
    return smooth_l1(ep1_l1[0] * ep1_l2[0] + ep1_l1[1] * ep1_l2[1], 0.0)[0]


def collinear_loss(pred_reg: np.ndarray, mask: np.ndarray, n_objects: int,
                   anchor: str = "intersection") -> Tuple[float, np.ndarray]:
    pred_reg = np.asarray(pred_reg, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    _check_reg(pred_reg, mask)
    n = max(int(n_objects), 1)
    xs, ys = _split_xy(pred_reg, anchor)
    gx, gy = np.zeros_like(xs), np.zeros_like(ys)
    total = 0.0
    for e1, e2 in LINE_ENDPOINTS:
        value, deriv = smooth_l1_array(xs[e1] * ys[e2] - xs[e2] * ys[e1])
        deriv = deriv * mask / n
        total += float(np.sum(value * mask))
        gx[e1] += deriv * ys[e2]
        gy[e2] += deriv * xs[e1]
        gx[e2] -= deriv * ys[e1]
        gy[e1] -= deriv * xs[e2]
    return total / n, _merge_xy(gx, gy, anchor)


def vertical_loss(pred_reg: np.ndarray, mask: np.ndarray, n_objects: int,
                  anchor: str = "intersection") -> Tuple[float, np.ndarray]:
    pred_reg = np.asarray(pred_reg, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    _check_reg(pred_reg, mask)
    n = max(int(n_objects), 1)
    xs, ys = _split_xy(pred_reg, anchor)
    a, b = LINE_ENDPOINTS[0][0], LINE_ENDPOINTS[1][0]
    value, deriv = smooth_l1_array(xs[a] * xs[b] + ys[a] * ys[b])
    deriv = deriv * mask / n
    gx, gy = np.zeros_like(xs), np.zeros_like(ys)
    gx[a], gx[b] = deriv * xs[b], deriv * xs[a]
    gy[a], gy[b] = deriv * ys[b], deriv * ys[a]
    return float(np.sum(value * mask)) / n, _merge_xy(gx, gy, anchor)


def line_loss(pred_reg: np.ndarray, target_reg: np.ndarray, mask: np.ndarray, n_objects: int,
              weights: LossWeights = LossWeights(), anchor: str = "intersection") -> LossValue:
    l1, g1 = endpoint_loss(pred_reg, target_reg, mask, n_objects)
    l2, g2 = collinear_loss(pred_reg, mask, n_objects, anchor)
    l3, g3 = vertical_loss(pred_reg, mask, n_objects, anchor)
    l3_weight = 0.0 if weights.text_mode else weights.beta
    line = l1 + weights.alpha * l2 + l3_weight * l3
    grad = g1 + weights.alpha * g2 + l3_weight * g3
    return LossValue(total=line, l1=l1, l2=l2, l3=l3, line=line, gamma=1.0, gradients={"reg": grad})


def total_loss(pred_maps, target_maps, weights: LossWeights = LossWeights(),
               anchor: str = "intersection") -> LossValue:
    """Focal loss over both branches' heatmaps plus gamma times their Line Loss."""
    _check_shapes(pred_heatmap=pred_maps.heatmap, target_heatmap=target_maps.heatmap)
    _check_shapes(pred_regression=pred_maps.regression, target_regression=target_maps.regression)
    n = target_maps.n_for_loss
    ip, g_hm = focal_ip_loss(pred_maps.heatmap, target_maps.heatmap, n, weights.alpha_focal)
    line = line_loss(pred_maps.regression, target_maps.regression, target_maps.reg_mask, n, weights, anchor)
    total = ip + weights.gamma * line.line
    logging.debug("loss total=%.6g ip=%.6g l1=%.6g l2=%.6g l3=%.6g", total, ip, line.l1, line.l2, line.l3)
    return LossValue(
        total=total, ip=ip, l1=line.l1, l2=line.l2, l3=line.l3, line=line.line, gamma=weights.gamma,
        gradients={"hm": g_hm, "reg": weights.gamma * line.gradients["reg"]},
    )
