import numpy as np
import pytest

from comal.boxes import BBox, decode_boxes, encode_boxes, iou, iou_matrix, nms


def random_box(rng, size=100.0):
    x0, y0 = rng.uniform(0, size * 0.8, size=2)
    w, h = rng.uniform(1.0, size * 0.2, size=2)
    return BBox(float(x0), float(y0), float(x0 + w), float(y0 + h))


class TestIoU:
    def test_identical_boxes(self):
        box = BBox(3.0, 4.0, 10.0, 12.0)
        assert iou(box, box) == 1.0

    def test_disjoint_boxes(self):
        assert iou(BBox(0, 0, 1, 1), BBox(5, 5, 6, 6)) == 0.0

    def test_hand_computed_overlap(self):
        # inter = 1x1 = 1, union = 4 + 4 - 1 = 7
        a = BBox(0, 0, 2, 2)
        b = BBox(1, 1, 3, 3)
        assert iou(a, b) == pytest.approx(1 / 7, abs=1e-12)

    def test_symmetry_on_random_boxes(self):
        rng = np.random.default_rng(7)
        for _ in range(300):
            a, b = random_box(rng), random_box(rng)
            assert iou(a, b) == pytest.approx(iou(b, a), abs=1e-12)

    def test_self_iou_is_one(self):
        rng = np.random.default_rng(11)
        for _ in range(300):
            a = random_box(rng)
            assert iou(a, a) == pytest.approx(1.0, abs=1e-12)

    def test_degenerate_box_rejected(self):
        with pytest.raises(ValueError):
            BBox(2, 0, 2, 1)

    def test_matrix_agrees_with_scalar(self):
        rng = np.random.default_rng(3)
        boxes_a = [random_box(rng) for _ in range(8)]
        boxes_b = [random_box(rng) for _ in range(5)]
        mat = iou_matrix(
            np.stack([b.as_array() for b in boxes_a]),
            np.stack([b.as_array() for b in boxes_b]),
        )
        for i, a in enumerate(boxes_a):
            for j, b in enumerate(boxes_b):
                assert mat[i, j] == pytest.approx(iou(a, b), abs=1e-12)


class TestNms:
    def test_duplicate_suppressed(self):
        boxes = np.array([[0, 0, 10, 10], [0, 0, 10, 10]], dtype=float)
        keep = nms(boxes, np.array([0.9, 0.8]), iou_threshold=0.5)
        assert keep.tolist() == [0]

    def test_disjoint_boxes_survive(self):
        boxes = np.array([[0, 0, 10, 10], [50, 50, 60, 60]], dtype=float)
        keep = nms(boxes, np.array([0.5, 0.9]), iou_threshold=0.5)
        assert sorted(keep.tolist()) == [0, 1]

    def test_tie_breaks_to_earlier_index(self):
        boxes = np.array([[0, 0, 10, 10], [1, 1, 11, 11]], dtype=float)
        keep = nms(boxes, np.array([0.7, 0.7]), iou_threshold=0.3)
        assert keep.tolist() == [0]


class TestBoxCoding:
    def test_roundtrip(self):
        rng = np.random.default_rng(5)
        anchors = np.stack([random_box(rng).as_array() for _ in range(200)])
        gt = np.stack([random_box(rng).as_array() for _ in range(200)])
        recovered = decode_boxes(encode_boxes(gt, anchors), anchors)
        np.testing.assert_allclose(recovered, gt, atol=1e-5)

    def test_identity_encoding_is_zero(self):
        anchors = np.array([[10, 10, 30, 40]], dtype=float)
        np.testing.assert_allclose(encode_boxes(anchors, anchors), 0.0, atol=1e-12)
