"""Set-prediction training loss: focal classification, L1 and GIoU regression.

Ground truths are matched to proposals by minimum-cost bipartite assignment;
the loss then combines the three terms with fixed weights 2.0 / 5.0 / 2.0.
Matching runs on plain values (off-tape); the loss terms themselves are
differentiable.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import autodiff as ad
from .errors import ParameterError, ShapeError
from .model import Box

CLS_WEIGHT = 2.0
L1_WEIGHT = 5.0
GIOU_WEIGHT = 2.0

FOCAL_GAMMA = 2.0
FOCAL_ALPHA = 0.25


def _corners(box4):
    cx, cy, w, h = box4
    return cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h


def giou(a: Box, b: Box) -> float:
    """Generalized IoU in [-1, 1]; degenerate boxes count as area zero."""
    ax0, ay0, ax1, ay1 = _corners(a.as_array())
    bx0, by0, bx1, by1 = _corners(b.as_array())
    inter = max(0.0, min(ax1, bx1) - max(ax0, bx0)) * max(
        0.0, min(ay1, by1) - max(ay0, by0)
    )
    union = a.w * a.h + b.w * b.h - inter
    iou = inter / union if union > 0.0 else 0.0
    enclosure = (max(ax1, bx1) - min(ax0, bx0)) * (max(ay1, by1) - min(ay0, by0))
    penalty = (enclosure - union) / enclosure if enclosure > 0.0 else 0.0
    return iou - penalty


def giou_pairwise(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """All-pairs GIoU, (m x 4) vs (n x 4) -> (m x n). Plain arrays only."""
    px0, py0, px1, py1 = (c[:, None] for c in _corners(pred.T))
    gx0, gy0, gx1, gy1 = (c[None, :] for c in _corners(gt.T))
    inter = np.clip(np.minimum(px1, gx1) - np.maximum(px0, gx0), 0.0, None) * np.clip(
        np.minimum(py1, gy1) - np.maximum(py0, gy0), 0.0, None
    )
    area_p = (pred[:, 2] * pred[:, 3])[:, None]
    area_g = (gt[:, 2] * gt[:, 3])[None, :]
    union = area_p + area_g - inter
    enclosure = (np.maximum(px1, gx1) - np.minimum(px0, gx0)) * (
        np.maximum(py1, gy1) - np.minimum(py0, gy0)
    )
    iou = np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)
    penalty = np.divide(
        enclosure - union, enclosure, out=np.zeros_like(inter), where=enclosure > 0
    )
    return iou - penalty


def _giou_rows(pred, gt):
    """Row-wise GIoU for matched (n x 4) pairs; differentiable in ``pred``."""
    px = ad.slice_cols(pred, 0, 1)
    py = ad.slice_cols(pred, 1, 2)
    pw = ad.slice_cols(pred, 2, 3)
    ph = ad.slice_cols(pred, 3, 4)
    gx, gy, gw, gh = (gt[:, i:i + 1] for i in range(4))
    px0, px1 = px - 0.5 * pw, px + 0.5 * pw
    py0, py1 = py - 0.5 * ph, py + 0.5 * ph
    gx0, gx1 = gx - 0.5 * gw, gx + 0.5 * gw
    gy0, gy1 = gy - 0.5 * gh, gy + 0.5 * gh
    inter = ad.relu(ad.minimum(px1, gx1) - ad.maximum(px0, gx0)) * ad.relu(
        ad.minimum(py1, gy1) - ad.maximum(py0, gy0)
    )
    union = pw * ph + gw * gh - inter
    enclosure = (ad.maximum(px1, gx1) - ad.minimum(px0, gx0)) * (
        ad.maximum(py1, gy1) - ad.minimum(py0, gy0)
    )
    return inter / union - (enclosure - union) / enclosure


def _focal_elements(logits, targets, gamma: float, alpha: float):
    """Per-class sigmoid focal terms, summed. ``targets`` is 0/1, same shape."""
    p = ad.sigmoid(logits)
    pos = targets * alpha * ((1.0 - p) ** gamma) * ad.softplus(-logits)
    neg = (1.0 - targets) * (1.0 - alpha) * (p ** gamma) * ad.softplus(logits)
    return ad.sum_all(pos + neg)


def focal_loss(logits, target: int | None,
               gamma: float = FOCAL_GAMMA, alpha: float = FOCAL_ALPHA) -> float:
    """Sigmoid focal loss over one (K+1)-way logit vector.

    ``target`` is a 1-based class id, or ``None`` for a negative (no object):
    every class then contributes only its negative term.
    """
    logits = np.asarray(logits, dtype=np.float64).reshape(1, -1)
    n = logits.shape[1]
    onehot = np.zeros((1, n))
    if target is not None:
        if not 1 <= target <= n:
            raise ParameterError(f"target class {target} outside 1..{n}")
        onehot[0, target - 1] = 1.0
    return float(_focal_elements(logits, onehot, gamma, alpha))


def hungarian_match(cost: np.ndarray) -> np.ndarray:
    """Minimum-cost injective assignment of ground truths to predictions.

    ``cost`` is (n_pred x n_gt); returns the matched prediction index for
    each ground truth, in ground-truth order.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ShapeError(f"cost must be 2-D, got {cost.ndim}-D")
    if not np.all(np.isfinite(cost)):
        raise ParameterError("cost entries must be finite")
    n_pred, n_gt = cost.shape
    if n_gt > n_pred:
        raise ParameterError(f"{n_gt} ground truths exceed {n_pred} predictions")
    rows, cols = linear_sum_assignment(cost)
    out = np.empty(n_gt, dtype=np.intp)
    out[cols] = rows
    return out


def detection_loss(logits, boxes, label_classes, label_boxes,
                   gamma: float = FOCAL_GAMMA, alpha: float = FOCAL_ALPHA):
    """Matched set-prediction loss; scalar node (taped) or plain scalar.

    ``logits`` (N_q x K+1) and ``boxes`` (N_q x 4) come from the heads;
    labels are a class-id vector (1-based, unknown included) and an
    (n x 4) box array.  Empty labels reduce to the all-negative
    classification term.
    """
    logit_values = ad.value_of(logits)
    box_values = ad.value_of(boxes)
    n_pred, n_cls = logit_values.shape
    label_classes = np.asarray(label_classes, dtype=np.intp).reshape(-1)
    label_boxes = np.asarray(label_boxes, dtype=np.float64).reshape(-1, 4)
    if label_boxes.shape[0] != label_classes.shape[0]:
        raise ShapeError("label classes and boxes disagree in length")
    if label_classes.size and not (
        (label_classes >= 1).all() and (label_classes <= n_cls).all()
    ):
        raise ParameterError(f"label classes must lie in 1..{n_cls}")

    targets = np.zeros((n_pred, n_cls))
    if label_classes.size:
        probs = 1.0 / (1.0 + np.exp(-logit_values))
        cost = (
            CLS_WEIGHT * -probs[:, label_classes - 1]
            + L1_WEIGHT * np.abs(box_values[:, None, :] - label_boxes[None, :, :]).sum(axis=2)
            + GIOU_WEIGHT * -giou_pairwise(box_values, label_boxes)
        )
        assign = hungarian_match(cost)
        targets[assign, label_classes - 1] = 1.0

    loss = CLS_WEIGHT * _focal_elements(logits, targets, gamma, alpha)
    if label_classes.size:
        matched = ad.gather_rows(boxes, assign)
        loss = loss + L1_WEIGHT * ad.sum_all(ad.absolute(matched - label_boxes))
        loss = loss + GIOU_WEIGHT * ad.sum_all(1.0 - _giou_rows(matched, label_boxes))
    return loss
