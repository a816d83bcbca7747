"""Detection losses with analytic gradients and a finite-difference oracle.

The suite covers the classic single-box regression and classification
losses:

    iou                  overlap / union of two axis-aligned boxes
    ciou_loss            1 - IoU + rho^2/c^2 + alpha*v, with gradient
    dfl_loss             two-bin cross entropy against a fractional target
    bce_loss             mean binary cross entropy, with gradient
    total_detection_loss weighted sum of the three parts

Every gradient-bearing loss is checked against finite_diff_grad, the
central-difference oracle also exported here.  Gradients of ciou_loss are
taken with the aspect-ratio tradeoff weight alpha held constant, the usual
convention for this loss; pass ``alpha=`` explicitly to evaluate the loss at
a frozen weight when finite-differencing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateBoxError,
    EmptyInputError,
    NonFiniteInputError,
    ParameterError,
    RangeError,
    ShapeError,
)

# probabilities are clamped to [PROB_CLAMP, 1 - PROB_CLAMP] before any log
PROB_CLAMP = 1e-12


@dataclass(frozen=True)
class Box2D:
    """Axis-aligned box as center (cx, cy) and positive size (w, h)."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (math.isfinite(self.cx) and math.isfinite(self.cy)
                and math.isfinite(self.w) and math.isfinite(self.h)):
            raise DegenerateBoxError("box fields must be finite")
        if self.w <= 0 or self.h <= 0:
            raise DegenerateBoxError(f"box size must be positive, got w={self.w}, h={self.h}")

    def corners(self) -> tuple[float, float, float, float]:
        """(x1, y1, x2, y2) corner form."""
        return (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h], dtype=float)


@dataclass(frozen=True)
class BinDistribution:
    """Probability mass over integer coordinate bins 0..n-1."""

    probs: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))
        if len(self.probs) < 2:
            raise ParameterError("a bin distribution needs at least two bins")
        for p in self.probs:
            if not 0.0 <= p <= 1.0:
                raise ParameterError(f"bin probability {p} outside [0, 1]")
        total = math.fsum(self.probs)
        if abs(total - 1.0) > 1e-9:
            raise ParameterError(f"bin probabilities sum to {total}, expected 1 within 1e-9")

    @property
    def n(self) -> int:
        return len(self.probs)


@dataclass(frozen=True)
class LossWeights:
    """Weights of the total detection loss; defaults (7.5, 0.5, 1.5)."""

    lambda_box: float = 7.5
    lambda_dfl: float = 0.5
    lambda_cls: float = 1.5

    def __post_init__(self):
        for name in ("lambda_box", "lambda_dfl", "lambda_cls"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be nonnegative")


def iou(a: Box2D, b: Box2D) -> float:
    """Intersection over union of two boxes, in [0, 1]."""
    ax1, ay1, ax2, ay2 = a.corners()
    bx1, by1, bx2, by2 = b.corners()
    ix = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    iy = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = ix * iy
    union = a.w * a.h + b.w * b.h - inter
    return inter / union


def ciou_loss(pred: Box2D, gt: Box2D, alpha: float | None = None) -> tuple[float, np.ndarray]:
    """Complete-IoU loss and its gradient w.r.t. (cx, cy, w, h) of pred.

    loss = 1 - IoU + rho^2/c^2 + alpha*v where rho^2 is the squared center
    distance, c the diagonal of the smallest enclosing box, and
    v = (4/pi^2)*(atan(w_gt/h_gt) - atan(w/h))^2 the aspect-ratio penalty.
    alpha defaults to v/((1-IoU)+v) and is treated as a constant by the
    gradient; pass a fixed value to evaluate the loss used for gradient
    verification.
    """
    px1, py1, px2, py2 = pred.corners()
    gx1, gy1, gx2, gy2 = gt.corners()

    def _min_share(p, g):
        # share of d(min(p, g))/dp; 1/2 at ties (symmetric subgradient,
        # which makes the gradient vanish exactly at pred == gt)
        return 1.0 if p < g else (0.5 if p == g else 0.0)

    def _max_share(p, g):
        return 1.0 if p > g else (0.5 if p == g else 0.0)

    # intersection, with subgradient indicators for the active corners
    hi_x, lo_x = min(px2, gx2), max(px1, gx1)
    hi_y, lo_y = min(py2, gy2), max(py1, gy1)
    ix, iy = hi_x - lo_x, hi_y - lo_y
    pred_hi_x = _min_share(px2, gx2)
    pred_lo_x = _max_share(px1, gx1)
    pred_hi_y = _min_share(py2, gy2)
    pred_lo_y = _max_share(py1, gy1)

    if ix > 0 and iy > 0:
        inter = ix * iy
        dix = np.array([pred_hi_x - pred_lo_x, 0.0, 0.5 * pred_hi_x + 0.5 * pred_lo_x, 0.0])
        diy = np.array([0.0, pred_hi_y - pred_lo_y, 0.0, 0.5 * pred_hi_y + 0.5 * pred_lo_y])
        d_inter = iy * dix + ix * diy
    else:
        inter = 0.0
        d_inter = np.zeros(4)

    area_p = pred.w * pred.h
    union = area_p + gt.w * gt.h - inter
    d_area_p = np.array([0.0, 0.0, pred.h, pred.w])
    d_union = d_area_p - d_inter
    iou_val = inter / union
    d_iou = (d_inter * union - inter * d_union) / (union * union)

    # squared center distance over squared enclosing diagonal
    dx, dy = pred.cx - gt.cx, pred.cy - gt.cy
    rho2 = dx * dx + dy * dy
    d_rho2 = np.array([2.0 * dx, 2.0 * dy, 0.0, 0.0])
    cw = max(px2, gx2) - min(px1, gx1)
    ch = max(py2, gy2) - min(py1, gy1)
    enc_hi_x = _max_share(px2, gx2)
    enc_lo_x = _min_share(px1, gx1)
    enc_hi_y = _max_share(py2, gy2)
    enc_lo_y = _min_share(py1, gy1)
    d_cw = np.array([enc_hi_x - enc_lo_x, 0.0, 0.5 * enc_hi_x + 0.5 * enc_lo_x, 0.0])
    d_ch = np.array([0.0, enc_hi_y - enc_lo_y, 0.0, 0.5 * enc_hi_y + 0.5 * enc_lo_y])
    c2 = cw * cw + ch * ch
    d_c2 = 2.0 * cw * d_cw + 2.0 * ch * d_ch
    d_center_term = (d_rho2 * c2 - rho2 * d_c2) / (c2 * c2)

    # aspect-ratio consistency
    datan = math.atan2(gt.w, gt.h) - math.atan2(pred.w, pred.h)
    v = (4.0 / math.pi ** 2) * datan * datan
    wh2 = pred.w * pred.w + pred.h * pred.h
    dv = np.array([
        0.0,
        0.0,
        -(8.0 / math.pi ** 2) * datan * (pred.h / wh2),
        (8.0 / math.pi ** 2) * datan * (pred.w / wh2),
    ])

    if alpha is None:
        denom = (1.0 - iou_val) + v
        alpha = 0.0 if denom == 0.0 else v / denom

    loss = (1.0 - iou_val) + rho2 / c2 + alpha * v
    grad = -d_iou + d_center_term + alpha * dv
    return loss, grad


def dfl_loss(dist: BinDistribution, y: float) -> tuple[float, np.ndarray]:
    """Distribution focal loss against a fractional bin coordinate y.

    Only the bins bracketing y contribute: with y_lo = floor(y) and
    y_hi = y_lo + 1,

        loss = -[(y_hi - y) * log p[y_lo] + (y - y_lo) * log p[y_hi]]

    The upper index is clamped to n-1 for safe indexing; its weight is zero
    exactly when the clamp applies.  An exact zero probability on a bin with
    positive weight yields an infinite loss (the flagged boundary sentinel)
    rather than an exception; otherwise probabilities are clamped from below
    to PROB_CLAMP before the logs (log of a probability near 1 is already
    safe).
    """
    n = dist.n
    if not 0.0 <= y <= n - 1:
        raise RangeError(f"target {y} outside [0, {n - 1}]")
    i_lo = int(math.floor(y))
    w_hi = y - i_lo
    w_lo = 1.0 - w_hi
    i_hi = min(i_lo + 1, n - 1)

    grad = np.zeros(n, dtype=float)
    flagged = (w_lo > 0 and dist.probs[i_lo] == 0.0) or (w_hi > 0 and dist.probs[i_hi] == 0.0)
    if flagged:
        if w_lo > 0:
            grad[i_lo] = -math.inf if dist.probs[i_lo] == 0.0 else -w_lo / dist.probs[i_lo]
        if w_hi > 0:
            grad[i_hi] = -math.inf if dist.probs[i_hi] == 0.0 else -w_hi / dist.probs[i_hi]
        return math.inf, grad

    loss = 0.0
    if w_lo > 0:
        p_lo = max(dist.probs[i_lo], PROB_CLAMP)
        loss -= w_lo * math.log(p_lo)
        grad[i_lo] += -w_lo / p_lo
    if w_hi > 0:
        p_hi = max(dist.probs[i_hi], PROB_CLAMP)
        loss -= w_hi * math.log(p_hi)
        grad[i_hi] += -w_hi / p_hi
    return loss, grad


def bce_loss(preds, labels) -> tuple[float, np.ndarray]:
    """Mean binary cross entropy and its gradient w.r.t. the predictions.

    Predictions are clamped to [PROB_CLAMP, 1 - PROB_CLAMP]; the gradient is
    that of the unclamped form evaluated at the clamped point.
    """
    preds = np.asarray(preds, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if preds.shape != labels.shape:
        raise ShapeError(f"preds shape {preds.shape} != labels shape {labels.shape}")
    if preds.size == 0:
        raise EmptyInputError("bce_loss needs at least one prediction")
    if not np.all((labels == 0.0) | (labels == 1.0)):
        raise ParameterError("labels must be 0 or 1")
    p = np.clip(preds, PROB_CLAMP, 1.0 - PROB_CLAMP)
    per_item = -(labels * np.log(p) + (1.0 - labels) * np.log1p(-p))
    loss = float(per_item.mean())
    grad = (-(labels / p) + (1.0 - labels) / (1.0 - p)) / preds.size
    return loss, grad


def total_detection_loss(l_ciou: float, l_dfl: float, l_bce: float,
                         w: LossWeights = LossWeights()) -> float:
    """Weighted sum lambda_box*l_ciou + lambda_dfl*l_dfl + lambda_cls*l_bce."""
    for name, val in (("l_ciou", l_ciou), ("l_dfl", l_dfl), ("l_bce", l_bce)):
        if not math.isfinite(val):
            raise NonFiniteInputError(f"{name} is not finite: {val}")
    return w.lambda_box * l_ciou + w.lambda_dfl * l_dfl + w.lambda_cls * l_bce


def finite_diff_grad(f, x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of a vector.

    Per coordinate: (f(x + h*e_i) - f(x - h*e_i)) / (2h).  A coordinate
    whose evaluations are not finite is flagged as NaN instead of raising.
    """
    if h <= 0:
        raise ParameterError(f"h must be positive, got {h}")
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    flat = grad.reshape(-1)
    xf = x.reshape(-1)
    for i in range(xf.size):
        xp = x.copy().reshape(-1)
        xm = x.copy().reshape(-1)
        xp[i] += h
        xm[i] -= h
        fp = float(f(xp.reshape(x.shape)))
        fm = float(f(xm.reshape(x.shape)))
        val = (fp - fm) / (2.0 * h)
        flat[i] = val if (math.isfinite(fp) and math.isfinite(fm) and math.isfinite(val)) else math.nan
    return grad


def dfl_loss_at(probs, y: float) -> float:
    """Two-term focal-loss formula at raw per-bin masses.

    Skips the simplex validation so the finite-difference oracle can probe
    points a step of h away from a proper distribution.  Masses at the
    bracketing bins must be positive.
    """
    probs = np.asarray(probs, dtype=float)
    n = probs.size
    if not 0.0 <= y <= n - 1:
        raise RangeError(f"target {y} outside [0, {n - 1}]")
    i_lo = int(math.floor(y))
    w_hi = y - i_lo
    w_lo = 1.0 - w_hi
    i_hi = min(i_lo + 1, n - 1)
    loss = 0.0
    if w_lo > 0:
        loss -= w_lo * math.log(max(probs[i_lo], PROB_CLAMP))
    if w_hi > 0:
        loss -= w_hi * math.log(max(probs[i_hi], PROB_CLAMP))
    return loss


def relative_error(a, b) -> float:
    """Scale-normalized sup error: max|a-b| / max(max|a|, max|b|, 1e-12)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ShapeError(f"shapes differ: {a.shape} vs {b.shape}")
    scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(b))), 1e-12)
    return float(np.max(np.abs(a - b))) / scale


def _bce_case(rng):
    n = int(rng.integers(1, 9))
    preds = rng.uniform(1e-3, 1.0 - 1e-3, size=n)
    labels = rng.integers(0, 2, size=n).astype(float)
    analytic = bce_loss(preds, labels)[1]
    # smaller step: near the 1e-3 probability guard the curvature of -log p
    # makes the h=1e-5 truncation error itself exceed 1e-5 relative
    numeric = finite_diff_grad(lambda p: bce_loss(p, labels)[0], preds, h=1e-6)
    return analytic, numeric


def _dfl_case(rng):
    n = int(rng.integers(3, 9))
    raw = rng.uniform(0.05, 1.0, size=n)
    probs = raw / raw.sum()
    frac = rng.uniform(1e-3, 1.0 - 1e-3)
    y = float(rng.integers(0, n - 1)) + frac
    analytic = dfl_loss(BinDistribution(tuple(probs)), y)[1]
    numeric = finite_diff_grad(lambda p: dfl_loss_at(p, y), probs)
    return analytic, numeric


def random_nondegenerate_box_pair(rng) -> tuple[Box2D, Box2D]:
    """Seeded (pred, gt) pair with IoU in (0.05, 0.95), clear of the
    min/max kinks so central differences stay on one smooth branch."""
    while True:
        gt = Box2D(rng.uniform(-2, 2), rng.uniform(-2, 2),
                   rng.uniform(0.5, 2.5), rng.uniform(0.5, 2.5))
        pred = Box2D(gt.cx + rng.uniform(-0.8, 0.8), gt.cy + rng.uniform(-0.8, 0.8),
                     max(0.2, gt.w + rng.uniform(-0.6, 0.6)),
                     max(0.2, gt.h + rng.uniform(-0.6, 0.6)))
        overlap = iou(pred, gt)
        if not 0.05 < overlap < 0.95:
            continue
        pc, gc = pred.corners(), gt.corners()
        if min(abs(p - g) for p, g in zip(pc, gc)) < 1e-3:
            continue
        return pred, gt


def _ciou_case(rng):
    pred, gt = random_nondegenerate_box_pair(rng)
    loss, analytic = ciou_loss(pred, gt)
    # freeze the tradeoff weight at its center-point value: the analytic
    # gradient treats it as a constant, so the probed function must too
    overlap = iou(pred, gt)
    datan = math.atan2(gt.w, gt.h) - math.atan2(pred.w, pred.h)
    v = (4.0 / math.pi ** 2) * datan * datan
    alpha = 0.0 if (1.0 - overlap) + v == 0.0 else v / ((1.0 - overlap) + v)
    numeric = finite_diff_grad(
        lambda vec: ciou_loss(Box2D(vec[0], vec[1], vec[2], vec[3]), gt, alpha=alpha)[0],
        pred.as_array(),
    )
    return analytic, numeric


_GRAD_CASES = {"bce": _bce_case, "dfl": _dfl_case, "ciou": _ciou_case}


def grad_check(loss_name: str, cases: int = 100, seed: int = 0,
               tolerance: float = 1e-4) -> dict:
    """Compare a loss's analytic gradient against central differences.

    Runs `cases` seeded nondegenerate inputs and reports the worst
    scale-normalized error.  Supported losses: bce, dfl, ciou.
    """
    if loss_name not in _GRAD_CASES:
        raise ParameterError(f"unknown loss {loss_name!r}; expected one of {sorted(_GRAD_CASES)}")
    if cases < 1:
        raise ParameterError("cases must be positive")
    rng = np.random.default_rng([seed, 7])
    make_case = _GRAD_CASES[loss_name]
    worst = 0.0
    for _ in range(cases):
        analytic, numeric = make_case(rng)
        worst = max(worst, relative_error(analytic, numeric))
    return {
        "loss": loss_name,
        "cases": cases,
        "seed": seed,
        "max_rel_err": worst,
        "tolerance": tolerance,
        "passed": worst <= tolerance,
    }
