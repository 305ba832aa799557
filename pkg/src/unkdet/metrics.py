"""Detection metrics: per-class AP, known mAP, unknown recall, harmonic score.

AP uses the all-point interpolation (exact area under the precision
envelope) at a single IoU threshold.  Matching is greedy in descending
score order; each detection may claim the unmatched ground truth with the
highest IoU at or above the threshold.  All reported values are percents.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import collab
from .errors import ParameterError, UsageError
from .model import DetectorConfig

SCORE_FLOOR = 0.05
IOU_THRESHOLD = 0.5


@dataclass(frozen=True)
class EvalConfig:
    iou_threshold: float = IOU_THRESHOLD
    score_floor: float = SCORE_FLOOR
    use_collab: bool = True
    unknown_cap: int | None = None   # per-image cap on unknown detections

    def __post_init__(self):
        if not 0.0 < self.iou_threshold < 1.0:
            raise ParameterError("iou_threshold must lie in (0,1)")
        if not 0.0 <= self.score_floor < 1.0:
            raise ParameterError("score_floor must lie in [0,1)")
        if self.unknown_cap is not None and self.unknown_cap < 0:
            raise ParameterError("unknown_cap must be None or >= 0")


@dataclass(frozen=True)
class ApResult:
    percent: float
    zero_gt: bool


@dataclass(frozen=True)
class MetricsReport:
    per_class_ap: list[float]
    known_map: float
    u_recall: float
    h_score: float
    images: int
    gt_known: int
    gt_unknown: int
    warnings: list[str] = field(default_factory=list)


def _box4(box) -> np.ndarray:
    arr = np.asarray(box, dtype=np.float64) if not hasattr(box, "as_array") \
        else box.as_array()
    return arr.reshape(4)


def _iou(a: np.ndarray, b: np.ndarray) -> float:
    ax0, ay0, ax1, ay1 = a[0] - a[2] / 2, a[1] - a[3] / 2, a[0] + a[2] / 2, a[1] + a[3] / 2
    bx0, by0, bx1, by1 = b[0] - b[2] / 2, b[1] - b[3] / 2, b[0] + b[2] / 2, b[1] + b[3] / 2
    inter = max(0.0, min(ax1, bx1) - max(ax0, bx0)) * max(0.0, min(ay1, by1) - max(ay0, by0))
    union = a[2] * a[3] + b[2] * b[3] - inter
    return inter / union if union > 0 else 0.0


def _greedy_flags(detections, gts, iou_thr):
    """Pool detections across images, sort by score, greedily mark true positives.

    Returns (tp flags in score order, total ground truths).
    """
    entries = []
    for img, dets in enumerate(detections):
        for order, (box, score) in enumerate(dets):
            score = float(score)
            if not np.isfinite(score):
                raise ParameterError("detection scores must be finite")
            entries.append((score, img, order, _box4(box)))
    entries.sort(key=lambda e: (-e[0], e[1], e[2]))
    gt_boxes = [[_box4(b) for b in per_img] for per_img in gts]
    taken = [np.zeros(len(per_img), dtype=bool) for per_img in gt_boxes]
    tp = np.zeros(len(entries), dtype=bool)
    for rank, (_score, img, _order, box) in enumerate(entries):
        best, best_iou = -1, -1.0
        for j, gt in enumerate(gt_boxes[img]):
            if taken[img][j]:
                continue
            value = _iou(box, gt)
            if value >= iou_thr and value > best_iou:
                best, best_iou = j, value
        if best >= 0:
            taken[img][best] = True
            tp[rank] = True
    return tp, sum(len(g) for g in gt_boxes)


def average_precision(detections, gts, iou_thr: float = IOU_THRESHOLD) -> ApResult:
    """All-point AP over per-image detection and ground-truth lists."""
    if not 0.0 < iou_thr < 1.0:
        raise ParameterError("iou_thr must lie in (0,1)")
    tp, n_gt = _greedy_flags(detections, gts, iou_thr)
    if n_gt == 0:
        return ApResult(0.0, zero_gt=True)
    if len(tp) == 0:
        return ApResult(0.0, zero_gt=False)
    cum_tp = np.cumsum(tp)
    recall = cum_tp / n_gt
    precision = cum_tp / np.arange(1, len(tp) + 1)
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    steps = np.nonzero(mrec[1:] != mrec[:-1])[0]
    ap = float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))
    return ApResult(100.0 * ap, zero_gt=False)


def u_recall(detections, gts, iou_thr: float = IOU_THRESHOLD) -> ApResult:
    """Fraction of unknown ground truths claimed by unknown detections."""
    if not 0.0 < iou_thr < 1.0:
        raise ParameterError("iou_thr must lie in (0,1)")
    tp, n_gt = _greedy_flags(detections, gts, iou_thr)
    if n_gt == 0:
        return ApResult(0.0, zero_gt=True)
    return ApResult(100.0 * float(tp.sum()) / n_gt, zero_gt=False)


def h_score(known_map: float, u_rec: float) -> float:
    """Harmonic mean of known mAP and unknown recall; zero when both vanish."""
    for value in (known_map, u_rec):
        if not 0.0 <= value <= 100.0:
            raise ParameterError("h_score inputs are percents in [0,100]")
    if known_map + u_rec == 0.0:
        return 0.0
    return 2.0 * known_map * u_rec / (known_map + u_rec)


def evaluate(params, scenes, detector_config: DetectorConfig,
             eval_config: EvalConfig = EvalConfig()) -> MetricsReport:
    """Run inference over an annotated dataset and score it."""
    if not scenes:
        raise UsageError("evaluation dataset is empty")
    k = detector_config.num_known
    det_by_class: list[list[list]] = [[] for _ in range(k)]
    gt_by_class: list[list[list]] = [[] for _ in range(k)]
    det_unknown: list[list] = []
    gt_unknown: list[list] = []
    for scene in scenes:
        result = collab.forward(scene.image, params, detector_config,
                                use_collab=eval_config.use_collab)
        probs = 1.0 / (1.0 + np.exp(-result.logits))
        for c in range(k):
            keep = probs[:, c] >= eval_config.score_floor
            det_by_class[c].append(
                [(result.boxes[i], probs[i, c]) for i in np.flatnonzero(keep)]
            )
            gt_by_class[c].append(
                [scene.boxes[j] for j in np.flatnonzero(scene.classes == c + 1)]
            )
        keep = np.flatnonzero(probs[:, k] >= eval_config.score_floor)
        keep = keep[np.argsort(-probs[keep, k], kind="stable")]
        if eval_config.unknown_cap is not None:
            keep = keep[:eval_config.unknown_cap]
        det_unknown.append([(result.boxes[i], probs[i, k]) for i in keep])
        gt_unknown.append([scene.boxes[j] for j in np.flatnonzero(scene.classes > k)])

    warnings: list[str] = []
    per_class = []
    for c in range(k):
        ap = average_precision(det_by_class[c], gt_by_class[c],
                               eval_config.iou_threshold)
        if ap.zero_gt:
            warnings.append(f"class {c + 1} has no ground truth")
        per_class.append(ap.percent)
    recall = u_recall(det_unknown, gt_unknown, eval_config.iou_threshold)
    if recall.zero_gt:
        warnings.append("no unknown ground truth")
    known_map = float(np.mean(per_class))
    return MetricsReport(
        per_class_ap=per_class,
        known_map=known_map,
        u_recall=recall.percent,
        h_score=h_score(known_map, recall.percent),
        images=len(scenes),
        gt_known=sum(len(g) for per in gt_by_class for g in per),
        gt_unknown=sum(len(g) for g in gt_unknown),
        warnings=warnings,
    )
