"""Training objectives for the detector and its committee.

Supervised terms are focal classification loss plus smooth-L1 box regression
for the main head, and the member-averaged focal loss for the committee. The
committee's disagreement on an instance is the group-form spread
(2/N) * sum_i ||p_i - mean||^2, identical to the mean pairwise squared L2
distance between members; per-image disagreement averages it over anchors,
optionally down-weighting each anchor by (1 - background_score)^gamma with the
background score treated as a constant. The total objective subtracts the
scaled disagreement so that minimizing it drives the committee apart.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .anchors import InstanceTargets
from .model import InstancePrediction

PROB_EPS = 1e-7
FOCAL_ALPHA = 0.25
FOCAL_GAMMA = 2.0


@dataclass(frozen=True)
class LossBreakdown:
    """One training step's loss components; total = l_main + l_com - lam * d_com."""

    l_main: float
    l_com: float
    d_com: float
    total: float
    lam: float
    gamma_weight: float

    def as_dict(self) -> dict:
        return {
            "l_main": self.l_main,
            "l_com": self.l_com,
            "d_com": self.d_com,
            "total": self.total,
            "lam": self.lam,
            "gamma_weight": self.gamma_weight,
        }


class TargetBatch:
    """Targets stacked over a batch as torch tensors ((B, T) / (B, T, 4))."""

    def __init__(self, targets: list[InstanceTargets], dtype=torch.float32):
        self.cls_target = torch.stack([torch.as_tensor(t.cls_target) for t in targets])
        self.loc_target = torch.stack(
            [torch.as_tensor(t.loc_target).to(dtype) for t in targets]
        )
        self.positive_mask = torch.stack([torch.as_tensor(t.positive_mask) for t in targets])
        self.ignore_mask = torch.stack([torch.as_tensor(t.ignore_mask) for t in targets])


def _target_tensors(targets) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
    """Accept InstanceTargets (numpy, one image) or TargetBatch (torch, batched)."""
    return (
        torch.as_tensor(targets.cls_target, dtype=torch.long),
        torch.as_tensor(targets.loc_target),
        torch.as_tensor(targets.positive_mask, dtype=torch.bool),
        torch.as_tensor(targets.ignore_mask, dtype=torch.bool),
    )


def focal_loss(
    pred_probs: torch.Tensor,
    targets,
    alpha: float = FOCAL_ALPHA,
    gamma_focal: float = FOCAL_GAMMA,
) -> torch.Tensor:
    """Focal loss over anchors: -alpha_t * (1 - p_t)^gamma * log(p_t).

    ``pred_probs`` is (..., T, K) probabilities whose leading axes broadcast
    against the targets' (..., T) shape, so one target set can score several
    committee members at once. alpha_t is ``alpha`` on foreground anchors and
    ``1 - alpha`` on background. Ignored anchors are excluded; the result is
    the mean over non-ignored anchors per image, then over leading axes.
    """
    pred_probs = torch.as_tensor(pred_probs)
    cls_target, _, positive_mask, ignore_mask = _target_tensors(targets)
    shape = torch.broadcast_shapes(pred_probs.shape[:-1], cls_target.shape)
    probs = pred_probs.expand(*shape, pred_probs.shape[-1])
    target = cls_target.expand(shape)
    p_t = probs.gather(-1, target.unsqueeze(-1)).squeeze(-1)
    p_t = p_t.clamp(PROB_EPS, 1.0 - PROB_EPS)
    alpha_t = torch.where(
        positive_mask.expand(shape),
        torch.as_tensor(alpha, dtype=probs.dtype),
        torch.as_tensor(1.0 - alpha, dtype=probs.dtype),
    )
    per_anchor = -alpha_t * (1.0 - p_t) ** gamma_focal * torch.log(p_t)
    valid = (~ignore_mask).expand(shape).to(probs.dtype)
    per_image = (per_anchor * valid).sum(dim=-1) / valid.sum(dim=-1).clamp(min=1.0)
    return per_image.mean()


def smooth_l1(pred_loc: torch.Tensor, target_loc: torch.Tensor) -> torch.Tensor:
    """Mean smooth-L1 over (P, 4) positive-anchor offsets; 0 when P = 0."""
    pred_loc = torch.as_tensor(pred_loc)
    target_loc = torch.as_tensor(target_loc).to(pred_loc.dtype)
    if pred_loc.numel() == 0:
        return torch.zeros((), dtype=pred_loc.dtype)
    diff = pred_loc - target_loc
    abs_diff = diff.abs()
    per_coord = torch.where(abs_diff < 1.0, 0.5 * diff**2, abs_diff - 0.5)
    return per_coord.mean()


def _localization_term(
    pred_loc: torch.Tensor, loc_target: torch.Tensor, positive_mask: torch.Tensor
) -> torch.Tensor:
    """Per-image smooth-L1 over positives, safe when an image has none."""
    diff = pred_loc - loc_target.to(pred_loc.dtype)
    abs_diff = diff.abs()
    per_coord = torch.where(abs_diff < 1.0, 0.5 * diff**2, abs_diff - 0.5)
    mask = positive_mask.to(pred_loc.dtype).unsqueeze(-1)
    per_image = (per_coord * mask).sum(dim=(-1, -2)) / (mask.sum(dim=(-1, -2)) * 4).clamp(min=1.0)
    return per_image


def main_loss(pred: InstancePrediction, targets) -> torch.Tensor:
    """Supervised loss of the main head: focal classification + smooth-L1, batch mean."""
    cls = focal_loss(pred.main_cls, targets)
    _, loc_target, positive_mask, _ = _target_tensors(targets)
    loc = _localization_term(pred.main_loc, loc_target, positive_mask).mean()
    return cls + loc


def committee_supervised_loss(pred: InstancePrediction, targets) -> torch.Tensor:
    """Mean over members of each member's focal loss on the labeled targets."""
    return focal_loss(pred.committee_cls, targets)


def instance_discrepancy(committee_cls: torch.Tensor) -> torch.Tensor:
    """Committee spread per anchor: (2/N) * sum over members of ||p - mean||^2.

    Equals the exhaustive (1/N^2) double sum of pairwise squared L2 distances.
    ``committee_cls`` has members on axis 0 and class probabilities on the last
    axis; any middle axes (anchors, batch) are preserved in the result.
    """
    committee_cls = torch.as_tensor(committee_cls)
    n = committee_cls.shape[0]
    if n < 2:
        raise ValueError("discrepancy needs at least 2 committee members")
    center = committee_cls.mean(dim=0, keepdim=True)
    return (2.0 / n) * ((committee_cls - center) ** 2).sum(dim=-1).sum(dim=0)


def image_discrepancy(
    pred: InstancePrediction, weighted: bool = False, gamma_weight: float = 1.0
) -> torch.Tensor:
    """Anchor-mean committee disagreement per image (scalar, or (B,) batched).

    With ``weighted`` set, each anchor is scaled by
    (1 - background_score)^gamma_weight so disagreement on likely-background
    anchors stops counting. The background score comes from the main
    classifier but is treated as a constant: no gradient flows into the main
    head or backbone through the weight.
    """
    d_ins = instance_discrepancy(pred.committee_cls)
    if weighted:
        if gamma_weight <= 0:
            raise ValueError("gamma_weight must be positive")
        w_bg = pred.background_score.detach()
        d_ins = (1.0 - w_bg) ** gamma_weight * d_ins
    return d_ins.mean(dim=-1)


def assemble_total(l_main, l_com, d_com, lam: float, gamma_weight: float = 1.0) -> LossBreakdown:
    """Combine loss components; the discrepancy term enters with a minus sign.

    The committee is driven to maximize its disagreement on unlabeled data,
    which the minimization realizes as the -lam * d_com term.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    total = l_main + l_com - lam * d_com
    return LossBreakdown(
        l_main=float(l_main),
        l_com=float(l_com),
        d_com=float(d_com),
        total=float(total),
        lam=lam,
        gamma_weight=gamma_weight,
    )
