"""Evaluator tests against an independent brute-force PR-curve oracle."""

import numpy as np
import pytest

from comal.boxes import BBox, iou
from comal.evaluation import Detection, EvalResult, evaluate_map


def brute_force_ap(flags: list[bool], num_gt: int) -> float:
    """All-point-interpolated AP computed by direct enumeration.

    ``flags`` is the TP/FP outcome of each prediction in descending-confidence
    order. Walks every prefix for its (precision, recall) point, then sums
    recall steps times the best precision at-or-beyond each step.
    """
    points = []
    tp = 0
    for i, flag in enumerate(flags, start=1):
        tp += int(flag)
        points.append((tp / num_gt, tp / i))
    ap = 0.0
    prev_recall = 0.0
    for recall, _ in points:
        if recall <= prev_recall:
            continue
        best_beyond = max(p for r, p in points if r >= recall)
        ap += (recall - prev_recall) * best_beyond
        prev_recall = recall
    return ap


def det(x0, y0, x1, y1, class_id=0, conf=0.9):
    return Detection(BBox(x0, y0, x1, y1), class_id, conf)


GT_A = BBox(0, 0, 10, 10)
GT_B = BBox(40, 40, 52, 52)


class TestEvaluateMap:
    def test_perfect_detector(self):
        gt = [(0, 0, GT_A), (0, 1, GT_B), (1, 0, BBox(5, 5, 20, 20))]
        preds = [
            (0, Detection(GT_A, 0, 1.0)),
            (0, Detection(GT_B, 1, 1.0)),
            (1, Detection(BBox(5, 5, 20, 20), 0, 1.0)),
        ]
        result = evaluate_map(preds, gt, 0.5)
        assert result.map_50 == pytest.approx(1.0, abs=1e-12)
        assert set(result.per_class_ap) == {0, 1}

    def test_zero_predictions(self):
        gt = [(0, 0, GT_A)]
        result = evaluate_map([], gt, 0.5)
        assert result.map_50 == 0.0

    def test_three_prediction_fixture_matches_oracle(self):
        # 1 class, 2 GT boxes, ranking TP(0.9), FP(0.8), TP(0.7)
        gt = [(0, 0, GT_A), (1, 0, GT_B)]
        preds = [
            (0, Detection(GT_A, 0, 0.9)),
            (0, Detection(BBox(60, 60, 70, 70), 0, 0.8)),
            (1, Detection(GT_B, 0, 0.7)),
        ]
        expected = brute_force_ap([True, False, True], num_gt=2)
        assert expected == pytest.approx(5 / 6, abs=1e-12)
        result = evaluate_map(preds, gt, 0.5)
        assert result.map_50 == pytest.approx(expected, abs=1e-12)

    def test_empty_ground_truth_rejected(self):
        with pytest.raises(ValueError):
            evaluate_map([], [], 0.5)

    def test_bad_threshold_rejected(self):
        with pytest.raises(ValueError):
            evaluate_map([], [(0, 0, GT_A)], 1.0)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(0)
        gt, preds = _random_eval_case(rng)
        base = evaluate_map(preds, gt, 0.5)
        for _ in range(5):
            p = [preds[i] for i in rng.permutation(len(preds))]
            g = [gt[i] for i in rng.permutation(len(gt))]
            shuffled = evaluate_map(p, g, 0.5)
            assert shuffled.map_50 == pytest.approx(base.map_50, abs=1e-12)
            assert shuffled.per_class_ap == pytest.approx(base.per_class_ap)

    def test_low_confidence_false_positive_never_helps(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            gt, preds = _random_eval_case(rng)
            base = evaluate_map(preds, gt, 0.5)
            min_conf = min(d.confidence for _, d in preds)
            extra = preds + [
                (0, Detection(BBox(90, 90, 95, 95), 0, min_conf * 0.5))
            ]
            worse = evaluate_map(extra, gt, 0.5)
            for class_id, ap in worse.per_class_ap.items():
                assert ap <= base.per_class_ap[class_id] + 1e-12

    def test_one_prediction_per_gt(self):
        # two predictions on the same GT: second-best must count as FP
        gt = [(0, 0, GT_A)]
        preds = [
            (0, Detection(GT_A, 0, 0.9)),
            (0, Detection(BBox(0.5, 0.5, 10, 10), 0, 0.8)),
        ]
        result = evaluate_map(preds, gt, 0.5)
        expected = brute_force_ap([True, False], num_gt=1)
        assert result.map_50 == pytest.approx(expected, abs=1e-12)

    def test_class_without_gt_excluded_from_mean(self):
        gt = [(0, 0, GT_A)]
        preds = [
            (0, Detection(GT_A, 0, 0.9)),
            (0, Detection(GT_B, 5, 0.9)),  # class 5 has no ground truth
        ]
        result = evaluate_map(preds, gt, 0.5)
        assert set(result.per_class_ap) == {0}
        assert result.map_50 == pytest.approx(1.0, abs=1e-12)

    def test_random_cases_match_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(30):
            gt, preds = _random_eval_case(rng, classes=1)
            result = evaluate_map(preds, gt, 0.5)
            flags = _oracle_flags(preds, gt, 0.5)
            expected = brute_force_ap(flags, num_gt=len(gt)) if preds else 0.0
            assert result.map_50 == pytest.approx(expected, abs=1e-12)


def _random_eval_case(rng, classes=2, images=4):
    gt = []
    preds = []
    for image_id in range(images):
        for _ in range(rng.integers(1, 4)):
            x0, y0 = rng.uniform(0, 60, 2)
            w, h = rng.uniform(8, 25, 2)
            class_id = int(rng.integers(0, classes))
            box = BBox(float(x0), float(y0), float(x0 + w), float(y0 + h))
            gt.append((image_id, class_id, box))
            if rng.random() < 0.8:  # noisy prediction near the gt box
                dx, dy = rng.uniform(-4, 4, 2)
                preds.append(
                    (
                        image_id,
                        Detection(
                            BBox(box.x_min + dx, box.y_min + dy, box.x_max + dx, box.y_max + dy),
                            class_id,
                            float(rng.uniform(0.1, 1.0)),
                        ),
                    )
                )
        for _ in range(rng.integers(0, 3)):  # pure false positives
            x0, y0 = rng.uniform(0, 70, 2)
            preds.append(
                (
                    image_id,
                    Detection(
                        BBox(float(x0), float(y0), float(x0 + 9), float(y0 + 9)),
                        int(rng.integers(0, classes)),
                        float(rng.uniform(0.1, 1.0)),
                    ),
                )
            )
    return gt, preds


def _oracle_flags(preds, gt, threshold):
    """Independent greedy matcher for single-class cases."""
    order = sorted(range(len(preds)), key=lambda i: (-preds[i][1].confidence, preds[i][0], i))
    matched = set()
    flags = []
    for i in order:
        image_id, detection = preds[i]
        best_iou, best_j = 0.0, None
        for j, (gt_image, _, gt_box) in enumerate(gt):
            if gt_image != image_id:
                continue
            value = iou(detection.box, gt_box)
            if value > best_iou:
                best_iou, best_j = value, j
        if best_j is not None and best_iou >= threshold and best_j not in matched:
            matched.add(best_j)
            flags.append(True)
        else:
            flags.append(False)
    return flags


def test_eval_result_mean_identity():
    result = EvalResult(per_class_ap={0: 0.5, 1: 1.0}, map_50=0.75)
    assert result.map_50 == pytest.approx(np.mean(list(result.per_class_ap.values())))
