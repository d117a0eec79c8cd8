"""Small anchor-based detector with a main head and an auxiliary committee.

The backbone is four strided conv blocks feeding a two-level feature pyramid.
The main head predicts class probabilities (softmax over foreground classes
plus explicit background) and box offsets; the committee is a set of extra
classification heads with independent initializations that consume a
gradient-detached copy of the backbone features. Optimizing any
committee-dependent objective therefore leaves the backbone and main head
untouched.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .anchors import AnchorGrid, build_anchors
from .boxes import decode_boxes, nms
from .config import DetectorConfig
from .evaluation import Detection
from .boxes import BBox


@dataclass
class InstancePrediction:
    """Per-anchor predictions for one image or a batch.

    Shapes are (T, K) / (T, 4) / (N, T, K) for a single image and
    (B, T, K) / (B, T, 4) / (N, B, T, K) for a batch, where K counts the
    foreground classes plus background (last column). All probability rows
    sum to one.
    """

    main_cls: torch.Tensor
    main_loc: torch.Tensor
    committee_cls: torch.Tensor

    @property
    def background_score(self) -> torch.Tensor:
        return self.main_cls[..., -1]

    @property
    def batched(self) -> bool:
        return self.main_cls.dim() == 3

    def image(self, i: int) -> "InstancePrediction":
        """Slice one image out of a batched prediction."""
        if not self.batched:
            raise ValueError("prediction is already per-image")
        return InstancePrediction(
            main_cls=self.main_cls[i],
            main_loc=self.main_loc[i],
            committee_cls=self.committee_cls[:, i],
        )


def _conv_block(in_ch: int, out_ch: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, 3, stride=2, padding=1),
        nn.GroupNorm(4, out_ch),
        nn.ReLU(inplace=True),
    )


def _head(in_ch: int, mid_ch: int, out_ch: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_ch, mid_ch, 3, padding=1),
        nn.ReLU(inplace=True),
        nn.Conv2d(mid_ch, out_ch, 3, padding=1),
    )


class CommitteeDetector(nn.Module):
    """Two-level single-stage detector plus N committee classification heads."""

    def __init__(self, config: DetectorConfig, image_size: int = 96, in_channels: int = 3):
        super().__init__()
        self.config = config
        self.image_size = image_size
        self.anchors: AnchorGrid = build_anchors(image_size, config.anchors)
        c1, c2, c3, c4 = config.stem_channels
        if c3 != c4:
            raise ValueError("both pyramid levels must share a channel width")
        self.blocks = nn.ModuleList(
            [_conv_block(in_channels, c1), _conv_block(c1, c2), _conv_block(c2, c3), _conv_block(c3, c4)]
        )
        a = config.anchors.anchors_per_cell
        k = config.num_outputs
        self.cls_head = _head(c4, config.head_channels, a * k)
        self.loc_head = _head(c4, config.head_channels, a * 4)
        self.committee = nn.ModuleList(
            _head(c4, config.head_channels, a * k) for _ in range(config.committee_size)
        )
        # bias the background logit so the untrained detector predicts mostly
        # background, which keeps the first focal-loss steps stable
        with torch.no_grad():
            bias = self.cls_head[-1].bias.view(a, k)
            bias[:, -1] += config.background_bias
            for head in self.committee:
                head[-1].bias.view(a, k)[:, -1] += config.background_bias

    def backbone_parameters(self):
        return list(self.blocks.parameters())

    def main_head_parameters(self):
        return list(self.cls_head.parameters()) + list(self.loc_head.parameters())

    def committee_parameters(self):
        return list(self.committee.parameters())

    def _features(self, images: torch.Tensor) -> list[torch.Tensor]:
        x = images
        feats = []
        for i, block in enumerate(self.blocks):
            x = block(x)
            if i >= 2:  # strides 8 and 16
                feats.append(x)
        return feats

    @staticmethod
    def _flatten(per_level: list[torch.Tensor], k: int) -> torch.Tensor:
        """(B, A*k, H, W) per level -> (B, T, k) in anchor order."""
        flat = []
        for t in per_level:
            b, ch, h, w = t.shape
            flat.append(t.permute(0, 2, 3, 1).reshape(b, h * w * (ch // k), k))
        return torch.cat(flat, dim=1)

    def forward(self, images) -> InstancePrediction:
        """Run the detector; accepts (C, H, W) or (B, C, H, W).

        Committee heads see detached features, so gradients from any
        committee output never reach the backbone.
        """
        if isinstance(images, np.ndarray):
            images = torch.from_numpy(images)
        single = images.dim() == 3
        if single:
            images = images.unsqueeze(0)
        feats = self._features(images)
        k = self.config.num_outputs
        main_cls = self._flatten([self.cls_head(f) for f in feats], k).softmax(dim=-1)
        main_loc = self._flatten([self.loc_head(f) for f in feats], 4)
        detached = [f.detach() for f in feats]
        members = [
            self._flatten([head(f) for f in detached], k).softmax(dim=-1)
            for head in self.committee
        ]
        committee_cls = torch.stack(members, dim=0)
        if single:
            return InstancePrediction(main_cls[0], main_loc[0], committee_cls[:, 0])
        return InstancePrediction(main_cls, main_loc, committee_cls)

    @torch.no_grad()
    def image_features(self, images) -> np.ndarray:
        """Global-average-pooled final backbone features, (B, C) float32."""
        if isinstance(images, np.ndarray):
            images = torch.from_numpy(images)
        if images.dim() == 3:
            images = images.unsqueeze(0)
        feats = self._features(images)
        return feats[-1].mean(dim=(2, 3)).cpu().numpy()

    @torch.no_grad()
    def predict(
        self,
        image,
        score_threshold: float | None = None,
        nms_iou: float | None = None,
    ) -> list[Detection]:
        """Decode one image's detections: threshold, class-wise NMS, top cap."""
        cfg = self.config
        score_threshold = cfg.score_threshold if score_threshold is None else score_threshold
        nms_iou = cfg.nms_iou if nms_iou is None else nms_iou
        if not (0.0 < score_threshold <= 1.0 and 0.0 < nms_iou < 1.0):
            raise ValueError("thresholds must lie in (0, 1)")
        was_training = self.training
        self.eval()
        try:
            pred = self.forward(image)
        finally:
            if was_training:
                self.train()
        return self.decode_detections(pred, score_threshold, nms_iou)

    def decode_detections(
        self, pred: InstancePrediction, score_threshold: float, nms_iou: float
    ) -> list[Detection]:
        if pred.batched:
            raise ValueError("decode_detections expects a per-image prediction")
        probs = pred.main_cls.detach().cpu().numpy()
        offsets = pred.main_loc.detach().cpu().numpy()
        boxes = decode_boxes(offsets, self.anchors.boxes)
        boxes = boxes.clip(0, self.image_size)
        detections: list[Detection] = []
        for class_id in range(self.config.num_classes):
            scores = probs[:, class_id]
            mask = scores >= score_threshold
            if not mask.any():
                continue
            cand_boxes = boxes[mask]
            cand_scores = scores[mask]
            valid = (cand_boxes[:, 2] > cand_boxes[:, 0]) & (cand_boxes[:, 3] > cand_boxes[:, 1])
            cand_boxes, cand_scores = cand_boxes[valid], cand_scores[valid]
            if len(cand_scores) == 0:
                continue
            for idx in nms(cand_boxes, cand_scores, nms_iou):
                detections.append(
                    Detection(
                        box=BBox.from_array(cand_boxes[idx]),
                        class_id=class_id,
                        confidence=float(min(cand_scores[idx], 1.0)),
                    )
                )
        detections.sort(key=lambda d: -d.confidence)
        return detections[: self.config.max_detections]


def build_model(config: DetectorConfig, image_size: int, in_channels: int, seed: int) -> CommitteeDetector:
    """Construct a detector with seed-determined initialization."""
    torch.manual_seed(seed)
    return CommitteeDetector(config, image_size=image_size, in_channels=in_channels)


def parameter_hash(params) -> str:
    """SHA-256 over the exact bytes of a parameter list; bit-level identity check."""
    digest = hashlib.sha256()
    for p in params:
        digest.update(p.detach().cpu().numpy().tobytes())
    return digest.hexdigest()


def save_checkpoint(model: CommitteeDetector, path, config_hash: str, cycle_index: int) -> None:
    """Write all parameters plus run metadata as a flat .npz container."""
    arrays = {
        f"param/{name}": tensor.detach().cpu().numpy()
        for name, tensor in model.state_dict().items()
    }
    arrays["meta/config_hash"] = np.array(config_hash)
    arrays["meta/cycle_index"] = np.array(cycle_index)
    arrays["meta/image_size"] = np.array(model.image_size)
    np.savez(path, **arrays)


def load_checkpoint(model: CommitteeDetector, path, expect_config_hash: str | None = None) -> int:
    """Load parameters saved by :func:`save_checkpoint`; returns the cycle index."""
    data = np.load(path)
    stored_hash = str(data["meta/config_hash"])
    if expect_config_hash is not None and stored_hash != expect_config_hash:
        raise ValueError(
            f"checkpoint config hash {stored_hash} does not match expected {expect_config_hash}"
        )
    state = {
        name.removeprefix("param/"): torch.from_numpy(data[name])
        for name in data.files
        if name.startswith("param/")
    }
    model.load_state_dict(state)
    return int(data["meta/cycle_index"])
