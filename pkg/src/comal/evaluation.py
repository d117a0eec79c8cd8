"""Detection-set evaluation: per-class average precision and its mean.

AP follows the all-point-interpolated precision/recall definition (VOC2010
style): predictions are matched greedily in descending confidence at a fixed
IoU threshold, each ground-truth box absorbs at most one prediction, and AP is
the area under the interpolated curve. Classes without ground truth are
excluded from the mean.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .boxes import BBox, iou_matrix


@dataclass(frozen=True)
class Detection:
    """One predicted box with its foreground class and confidence."""

    box: BBox
    class_id: int
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence outside [0, 1]: {self.confidence}")


@dataclass(frozen=True)
class EvalResult:
    per_class_ap: dict[int, float]
    map_50: float


def _average_precision(tp: np.ndarray, num_gt: int) -> float:
    """All-point-interpolated AP from a confidence-ordered TP/FP sequence."""
    if num_gt == 0:
        raise ValueError("AP undefined for a class with no ground truth")
    if tp.size == 0:
        return 0.0
    cum_tp = np.cumsum(tp)
    cum_fp = np.cumsum(~tp)
    recall = cum_tp / num_gt
    precision = cum_tp / (cum_tp + cum_fp)
    # precision envelope: at each recall level use the best precision achieved
    # at that recall or beyond, then integrate over recall steps
    r = np.concatenate([[0.0], recall, [1.0]])
    p = np.concatenate([[0.0], precision, [0.0]])
    for i in range(len(p) - 2, -1, -1):
        p[i] = max(p[i], p[i + 1])
    steps = np.nonzero(r[1:] != r[:-1])[0]
    return float(np.sum((r[steps + 1] - r[steps]) * p[steps + 1]))


def evaluate_map(
    predictions: list[tuple[int, Detection]],
    ground_truth: list[tuple[int, int, BBox]],
    iou_threshold: float = 0.5,
) -> EvalResult:
    """Score a prediction set against ground truth at one IoU threshold.

    Args:
        predictions: (image_id, detection) pairs over the evaluated images.
        ground_truth: (image_id, class_id, box) triples.
        iou_threshold: match cutoff in (0, 1).

    Returns:
        EvalResult with per-class AP and their arithmetic mean.

    Raises:
        ValueError: when the ground truth is empty (unusable evaluation split)
            or the threshold is out of range.
    """
    if not 0.0 < iou_threshold < 1.0:
        raise ValueError(f"iou_threshold outside (0, 1): {iou_threshold}")
    if not ground_truth:
        raise ValueError("empty ground truth: evaluation split is unusable")

    gt_boxes: dict[int, dict[int, list]] = defaultdict(lambda: defaultdict(list))
    gt_count: dict[int, int] = defaultdict(int)
    for image_id, class_id, box in ground_truth:
        gt_boxes[class_id][image_id].append(box.as_array())
        gt_count[class_id] += 1

    preds_by_class: dict[int, list] = defaultdict(list)
    for insert_idx, (image_id, det) in enumerate(predictions):
        preds_by_class[det.class_id].append((det.confidence, image_id, insert_idx, det))

    per_class_ap: dict[int, float] = {}
    for class_id, num_gt in sorted(gt_count.items()):
        entries = preds_by_class.get(class_id, [])
        # descending confidence; equal confidences resolve by (image_id,
        # insertion order) so reruns are deterministic
        entries.sort(key=lambda e: (-e[0], e[1], e[2]))
        matched: dict[int, np.ndarray] = {
            img: np.zeros(len(boxes), dtype=bool) for img, boxes in gt_boxes[class_id].items()
        }
        tp = np.zeros(len(entries), dtype=bool)
        for i, (_, image_id, _, det) in enumerate(entries):
            candidates = gt_boxes[class_id].get(image_id)
            if not candidates:
                continue
            ious = iou_matrix(det.box.as_array(), np.stack(candidates))[0]
            best = int(np.argmax(ious))
            if ious[best] >= iou_threshold and not matched[image_id][best]:
                matched[image_id][best] = True
                tp[i] = True
        per_class_ap[class_id] = _average_precision(tp, num_gt)

    map_50 = float(np.mean(list(per_class_ap.values())))
    return EvalResult(per_class_ap=per_class_ap, map_50=map_50)


def format_gt_record(image_id: int, class_id: int, box: BBox) -> str:
    """One ground-truth box as a line-delimited audit record."""
    return f"{image_id} {class_id} {box.x_min:.3f} {box.y_min:.3f} {box.x_max:.3f} {box.y_max:.3f}"


def format_detection_record(image_id: int, det: Detection) -> str:
    """One detection as a line-delimited audit record."""
    b = det.box
    return (
        f"{image_id} {det.class_id} {b.x_min:.3f} {b.y_min:.3f} "
        f"{b.x_max:.3f} {b.y_max:.3f} {det.confidence:.6f}"
    )
