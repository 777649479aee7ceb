"""Central finite-difference verification of the analytic loss gradients."""
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from midlines import constants as C
from midlines.config.run_config import LossWeights
from midlines.encoder.target_encoder import TargetMaps
from midlines.exception.exception import KinkProximity
from midlines.logging.logger import kv, logging
from midlines.loss.line_loss import (
    LINE_ENDPOINTS,
    _split_xy,
    collinear_loss,
    endpoint_loss,
    focal_ip_loss,
    line_loss,
    total_loss,
    vertical_loss,
)

LossFn = Callable[[np.ndarray], Tuple[float, np.ndarray]]
# point -> (smooth-L1 arguments, per-argument bound on |d arg / d x_i|)
SmoothArgs = Callable[[np.ndarray], Tuple[np.ndarray, np.ndarray]]


@dataclass
class GradCase:
    name: str
    fn: LossFn
    point: np.ndarray
    smooth_args: Optional[SmoothArgs] = None
    prob_mask: Optional[np.ndarray] = None


@dataclass
class GradCheckReport:
    name: str
    max_rel_error: float
    passed: bool
    n_entries: int
    worst_index: int = -1


def check_preconditions(case: GradCase, step: float):
    x = case.point
    if case.smooth_args is not None:
        args, sens = case.smooth_args(x)
        if args.size:
            margin = np.abs(np.abs(args) - C.SMOOTH_L1_KINK)
            limit = 10.0 * step * np.maximum(1.0, sens)
            if np.any(margin <= limit):
                worst = int(np.argmin(margin - limit))
                raise KinkProximity(f"{case.name}: smooth-L1 argument {args.flat[worst]:.6g} "
                                    f"within {limit.flat[worst]:.3g} of the kink")
    if case.prob_mask is not None:
        probs = x[case.prob_mask]
        lo, hi = C.PROB_EPS + 10.0 * step, 1.0 - C.PROB_EPS - 10.0 * step
        if probs.size and (probs.min() < lo or probs.max() > hi):
            raise KinkProximity(f"{case.name}: heatmap value outside [{lo}, {hi}]")


def numeric_gradient(fn: LossFn, point: np.ndarray, step: float) -> np.ndarray:
    x = np.array(point, dtype=np.float64, copy=True)
    grad = np.zeros_like(x)
    for i in range(x.size):
        orig = x.flat[i]
        x.flat[i] = orig + step
        f_plus = fn(x)[0]
        x.flat[i] = orig - step
        f_minus = fn(x)[0]
        x.flat[i] = orig
        grad.flat[i] = (f_plus - f_minus) / (2.0 * step)
    return grad


def grad_check(case: GradCase, step: float = C.GRAD_STEP, tolerance: float = C.GRAD_TOLERANCE,
               perturb: float = 0.0) -> GradCheckReport:
    """Compare analytic and central-difference gradients of case.fn at case.point.

    perturb scales the analytic gradient by (1 + perturb); a non-zero value is a negative control.
    """
    check_preconditions(case, step)
    analytic = np.asarray(case.fn(case.point)[1], dtype=np.float64) * (1.0 + perturb)
    numeric = numeric_gradient(case.fn, case.point, step)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), C.GRAD_REL_FLOOR)
    rel = np.abs(analytic - numeric) / denom
    worst = int(np.argmax(rel)) if rel.size else -1
    max_rel = float(rel.flat[worst]) if rel.size else 0.0
    return GradCheckReport(case.name, max_rel, max_rel < tolerance, int(rel.size), worst)


def collinear_args(reg: np.ndarray, mask: np.ndarray, anchor: str = "intersection"):
    xs, ys = _split_xy(reg, anchor)
    args, sens = [], []
    for e1, e2 in LINE_ENDPOINTS:
        d = xs[e1] * ys[e2] - xs[e2] * ys[e1]
        s = np.abs(xs[e1]) + np.abs(ys[e2]) + np.abs(xs[e2]) + np.abs(ys[e1])
        args.append(d[mask])
        sens.append(s[mask])
    return np.concatenate(args), np.concatenate(sens)


def vertical_args(reg: np.ndarray, mask: np.ndarray, anchor: str = "intersection"):
    xs, ys = _split_xy(reg, anchor)
    a, b = LINE_ENDPOINTS[0][0], LINE_ENDPOINTS[1][0]
    d = xs[a] * xs[b] + ys[a] * ys[b]
    s = np.abs(xs[a]) + np.abs(xs[b]) + np.abs(ys[a]) + np.abs(ys[b])
    return d[mask], s[mask]


def endpoint_args(reg: np.ndarray, target: np.ndarray, mask: np.ndarray):
    d = (reg - target)[np.broadcast_to(np.expand_dims(mask, -3), reg.shape)]
    return d, np.ones_like(d)


def focal_case(pred_hm: np.ndarray, gt_hm: np.ndarray, n_objects: int,
                alpha_focal: float = C.ALPHA_FOCAL) -> GradCase:
    return GradCase("focal_ip", lambda x: focal_ip_loss(x, gt_hm, n_objects, alpha_focal),
                     np.asarray(pred_hm, dtype=np.float64),
                     prob_mask=np.ones(np.shape(pred_hm), dtype=bool))


def endpoint_case(pred_reg, target_reg, mask, n_objects) -> GradCase:
    return GradCase("endpoint", lambda x: endpoint_loss(x, target_reg, mask, n_objects),
                     np.asarray(pred_reg, dtype=np.float64),
                     smooth_args=lambda x: endpoint_args(x, target_reg, mask))


def collinear_case(pred_reg, mask, n_objects, anchor: str = "intersection") -> GradCase:
    return GradCase("collinear", lambda x: collinear_loss(x, mask, n_objects, anchor),
                     np.asarray(pred_reg, dtype=np.float64),
                     smooth_args=lambda x: collinear_args(x, mask, anchor))


def vertical_case(pred_reg, mask, n_objects, anchor: str = "intersection") -> GradCase:
    return GradCase("vertical", lambda x: vertical_loss(x, mask, n_objects, anchor),
                     np.asarray(pred_reg, dtype=np.float64),
                     smooth_args=lambda x: vertical_args(x, mask, anchor))


def _line_args(x, target_reg, mask, anchor):
    parts = [endpoint_args(x, target_reg, mask), collinear_args(x, mask, anchor), vertical_args(x, mask, anchor)]
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def line_case(pred_reg, target_reg, mask, n_objects, weights: LossWeights = LossWeights(),
               anchor: str = "intersection") -> GradCase:
    def fn(x):
        value = line_loss(x, target_reg, mask, n_objects, weights, anchor)
        return value.total, value.gradients["reg"]

    return GradCase("line", fn, np.asarray(pred_reg, dtype=np.float64),
                     smooth_args=lambda x: _line_args(x, target_reg, mask, anchor))


def total_case(pred: TargetMaps, target: TargetMaps, weights: LossWeights = LossWeights(),
                anchor: str = "intersection") -> GradCase:
    """Case over the concatenated (heatmap, regression) prediction vector."""
    hm_size = pred.heatmap.size

    def unpack(x):
        return TargetMaps(stride=pred.stride, num_classes=pred.num_classes, width=pred.width,
                          height=pred.height, heatmap=x[:hm_size].reshape(pred.heatmap.shape),
                          regression=x[hm_size:].reshape(pred.regression.shape),
                          reg_mask=pred.reg_mask, class_names=pred.class_names)

    def fn(x):
        value = total_loss(unpack(x), target, weights, anchor)
        return value.total, np.concatenate([value.gradients["hm"].ravel(), value.gradients["reg"].ravel()])

    point = np.concatenate([pred.heatmap.ravel(), pred.regression.ravel()]).astype(np.float64)
    prob_mask = np.zeros(point.shape, dtype=bool)
    prob_mask[:hm_size] = True
    return GradCase(
        "total", fn, point,
        smooth_args=lambda x: _line_args(x[hm_size:].reshape(pred.regression.shape),
                                         target.regression, target.reg_mask, anchor),
        prob_mask=prob_mask,
    )


def random_cases(rng: np.random.Generator, num_classes: int = 2, size: int = 3,
                  weights: LossWeights = LossWeights()) -> List[GradCase]:
    """One case per loss at a random evaluation point (kink proximity not yet checked)."""
    shape = (size, size)
    n = int(rng.integers(1, 4))
    reg = rng.uniform(-40.0, 40.0, (C.REGRESSION_CHANNELS,) + shape)
    target = reg + rng.uniform(-3.0, 3.0, reg.shape)
    mask = rng.random(shape) < 0.6
    mask.flat[int(rng.integers(mask.size))] = True
    pred_hm = rng.uniform(0.05, 0.95, (num_classes,) + shape)
    gt_hm = (rng.random(pred_hm.shape) < 0.3).astype(np.float64)

    small = (2, 2)
    t_mask = rng.random((2,) + small) < 0.6
    t_mask.flat[int(rng.integers(t_mask.size))] = True
    t_reg = rng.uniform(-40.0, 40.0, (2, C.REGRESSION_CHANNELS) + small)
    target_maps = TargetMaps(stride=C.STRIDE, num_classes=num_classes, width=small[1], height=small[0],
                             heatmap=(rng.random((2, num_classes) + small) < 0.3).astype(np.float64),
                             regression=t_reg, reg_mask=t_mask, n_objects=n)
    pred_maps = TargetMaps(stride=C.STRIDE, num_classes=num_classes, width=small[1], height=small[0],
                           heatmap=rng.uniform(0.05, 0.95, (2, num_classes) + small),
                           regression=t_reg + rng.uniform(-3.0, 3.0, t_reg.shape),
                           reg_mask=np.zeros_like(t_mask))

    return [
        focal_case(pred_hm, gt_hm, n, weights.alpha_focal),
        endpoint_case(reg, target, mask, n),
        collinear_case(reg, mask, n),
        vertical_case(reg, mask, n),
        line_case(reg, target, mask, n, weights),
        total_case(pred_maps, target_maps, weights),
    ]


LOSS_NAMES = ("focal_ip", "endpoint", "collinear", "vertical", "line", "total")


def run_gradcheck(seed: int, samples: int, step: float = C.GRAD_STEP, tolerance: float = C.GRAD_TOLERANCE,
                  perturb: float = 0.0, max_attempts: int = 50, weights: LossWeights = LossWeights(),
                  losses: Optional[Sequence[str]] = None) -> Dict[str, GradCheckReport]:
    """Check each loss in `losses` (default: all) at `samples` random smooth points.

    Returns the worst report per loss; `weights` sets the focal alpha and the Line Loss mix.
    """
    if samples < 1:
        raise ValueError(f"samples must be >= 1, got {samples}")
    wanted = set(LOSS_NAMES if losses is None else losses)
    unknown = wanted - set(LOSS_NAMES)
    if unknown:
        raise ValueError(f"unknown losses {sorted(unknown)}; expected a subset of {list(LOSS_NAMES)}")
    rng = np.random.default_rng(seed)
    worst: Dict[str, GradCheckReport] = {}
    for _ in range(samples):
        done = set()
        for _attempt in range(max_attempts):
            for case in random_cases(rng, weights=weights):
                if case.name in done or case.name not in wanted:
                    continue
                try:
                    report = grad_check(case, step, tolerance, perturb)
                except KinkProximity:
                    continue
                done.add(case.name)
                if case.name not in worst or report.max_rel_error > worst[case.name].max_rel_error:
                    worst[case.name] = report
            if done == wanted:
                break
        else:
            raise KinkProximity(f"no kink-free evaluation point found in {max_attempts} attempts")
    for name, report in worst.items():
        logging.info(kv(event="gradcheck", loss=name, max_rel_error=f"{report.max_rel_error:.3e}",
                        passed=report.passed))
    return worst
