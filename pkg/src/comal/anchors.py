"""Anchor grid construction and ground-truth assignment."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .boxes import BBox, encode_boxes, iou_matrix
from .config import AnchorConfig


@dataclass(frozen=True)
class AnchorGrid:
    """All anchors of one image, concatenated over pyramid levels.

    ``boxes`` is (T, 4) corner coordinates; ``level_offsets`` holds the
    [start, end) index range of each level.
    """

    boxes: np.ndarray
    level_offsets: tuple[tuple[int, int], ...]

    @property
    def count(self) -> int:
        return self.boxes.shape[0]


@dataclass(frozen=True)
class InstanceTargets:
    """Per-anchor training targets from one image's annotations.

    ``cls_target`` is the class index per anchor with background = num_classes;
    ``loc_target`` holds encoded offsets, meaningful only where
    ``positive_mask`` is set. Anchors under ``ignore_mask`` contribute to no
    loss term.
    """

    cls_target: np.ndarray
    loc_target: np.ndarray
    positive_mask: np.ndarray
    ignore_mask: np.ndarray

    @property
    def num_positive(self) -> int:
        return int(self.positive_mask.sum())


def build_anchors(image_size: int, config: AnchorConfig) -> AnchorGrid:
    """Lay out anchors on cell centers for every pyramid level.

    Boxes are clipped to image bounds. Order: levels as configured, cells
    row-major, then (size, ratio) combinations within a cell.
    """
    all_boxes = []
    offsets = []
    start = 0
    for stride, sizes in zip(config.strides, config.sizes, strict=True):
        if image_size % stride != 0:
            raise ValueError(f"stride {stride} does not divide image size {image_size}")
        grid = image_size // stride
        centers = (np.arange(grid) + 0.5) * stride
        shapes = []
        for size in sizes:
            for ratio in config.ratios:
                w = size * np.sqrt(ratio)
                h = size / np.sqrt(ratio)
                shapes.append((w, h))
        for cy in centers:
            for cx in centers:
                for w, h in shapes:
                    all_boxes.append((cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2))
        end = start + grid * grid * len(shapes)
        offsets.append((start, end))
        start = end
    boxes = np.array(all_boxes, dtype=np.float64)
    boxes[:, 0::2] = boxes[:, 0::2].clip(0, image_size)
    boxes[:, 1::2] = boxes[:, 1::2].clip(0, image_size)
    return AnchorGrid(boxes=boxes, level_offsets=tuple(offsets))


def match_targets(
    anchors: AnchorGrid,
    annotations: tuple[tuple[int, BBox], ...] | list,
    num_classes: int,
    positive_iou: float = 0.5,
    negative_iou: float = 0.4,
) -> InstanceTargets:
    """Assign each anchor to background, an object, or ignore.

    An anchor is positive when its best IoU reaches ``positive_iou`` (it takes
    that ground-truth box), negative below ``negative_iou``, and ignored in
    between. Every ground-truth box additionally claims its single best anchor
    even when that IoU falls short, so no annotation goes unmatched.
    """
    count = anchors.count
    background = num_classes
    cls_target = np.full(count, background, dtype=np.int64)
    loc_target = np.zeros((count, 4), dtype=np.float64)
    positive_mask = np.zeros(count, dtype=bool)
    ignore_mask = np.zeros(count, dtype=bool)
    if len(annotations) == 0:
        return InstanceTargets(cls_target, loc_target, positive_mask, ignore_mask)

    gt_boxes = np.stack([box.as_array() for _, box in annotations])
    gt_classes = np.array([class_id for class_id, _ in annotations], dtype=np.int64)
    ious = iou_matrix(anchors.boxes, gt_boxes)  # (T, G)
    best_gt = ious.argmax(axis=1)
    best_iou = ious[np.arange(count), best_gt]

    positive_mask = best_iou >= positive_iou
    ignore_mask = (best_iou >= negative_iou) & ~positive_mask

    # force-match: each ground truth claims its best anchor regardless of IoU
    forced = ious.argmax(axis=0)
    for g, anchor_idx in enumerate(forced):
        best_gt[anchor_idx] = g
        positive_mask[anchor_idx] = True
        ignore_mask[anchor_idx] = False

    assigned = best_gt[positive_mask]
    cls_target[positive_mask] = gt_classes[assigned]
    loc_target[positive_mask] = encode_boxes(gt_boxes[assigned], anchors.boxes[positive_mask])
    return InstanceTargets(cls_target, loc_target, positive_mask, ignore_mask)
