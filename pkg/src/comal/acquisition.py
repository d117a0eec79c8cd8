"""Scoring of unlabeled images and batch selection strategies.

The committee strategy scores an image by the mean of its top-ranked
per-anchor disagreement values; entropy sums the main classifier's Shannon
entropy over anchors; core-set runs greedy k-center on pooled backbone
features; random draws uniformly. Selection always takes the budget
highest-scoring unlabeled ids, breaking ties towards the smaller image id.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .dataset import Dataset
from .losses import instance_discrepancy
from .model import CommitteeDetector, InstancePrediction
from .pool import PoolState

INFERENCE_BATCH = 32


@dataclass(frozen=True)
class ImageScore:
    """One image's uncertainty with its highest-scoring instances for audit."""

    image_id: int
    score: float
    top_instances: tuple[tuple[int, float], ...]


@dataclass(frozen=True)
class SelectionResult:
    strategy_name: str
    selected_ids: tuple[int, ...]
    all_scores: tuple[ImageScore, ...] = field(default=())


def score_from_instance_values(
    image_id: int, values: np.ndarray, top_k: int
) -> ImageScore:
    """Descending-sort instance values and average the first min(top_k, T).

    No zero padding when top_k exceeds the instance count: the mean runs over
    the instances that exist.
    """
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(-values, kind="stable")
    keep = order[: min(top_k, len(values))]
    return ImageScore(
        image_id=image_id,
        score=float(values[keep].mean()) if len(keep) else 0.0,
        top_instances=tuple((int(i), float(values[i])) for i in keep),
    )


def committee_instance_values(
    pred: InstancePrediction, weighted: bool = False, gamma_weight: float = 1.0
) -> np.ndarray:
    """Per-anchor committee disagreement of one image as a float array."""
    values = instance_discrepancy(pred.committee_cls)
    if weighted:
        values = (1.0 - pred.background_score) ** gamma_weight * values
    return values.detach().cpu().numpy().astype(np.float64)


def score_image_committee(
    pred: InstancePrediction,
    top_k: int,
    image_id: int = -1,
    weighted: bool = False,
    gamma_weight: float = 1.0,
) -> ImageScore:
    """Image uncertainty from committee disagreement on its top-k instances.

    Instance values default to the unweighted disagreement; background
    weighting at selection time stays available behind ``weighted`` for
    ablation runs.
    """
    values = committee_instance_values(pred, weighted=weighted, gamma_weight=gamma_weight)
    return score_from_instance_values(image_id, values, top_k)


def score_image_entropy(pred: InstancePrediction, image_id: int = -1) -> ImageScore:
    """Sum of per-anchor Shannon entropy (nats) of the main classifier."""
    probs = pred.main_cls.detach().cpu().numpy().astype(np.float64)
    safe = np.clip(probs, 1e-12, 1.0)
    per_anchor = -(safe * np.log(safe)).sum(axis=-1)
    order = np.argsort(-per_anchor, kind="stable")
    return ImageScore(
        image_id=image_id,
        score=float(per_anchor.sum()),
        top_instances=tuple((int(i), float(per_anchor[i])) for i in order),
    )


def select_core_set(
    labeled_features: np.ndarray, unlabeled_features: np.ndarray, budget: int
) -> list[int]:
    """Greedy k-center: repeatedly take the unlabeled point farthest from the
    labeled-plus-selected set. Returns indices into ``unlabeled_features``.
    """
    unlabeled_features = np.asarray(unlabeled_features, dtype=np.float64)
    labeled_features = np.asarray(labeled_features, dtype=np.float64)
    n = len(unlabeled_features)
    budget = min(budget, n)
    if budget <= 0:
        return []
    if len(labeled_features):
        diffs = unlabeled_features[:, None, :] - labeled_features[None, :, :]
        min_dist = np.sqrt((diffs**2).sum(-1)).min(axis=1)
    else:
        min_dist = np.full(n, np.inf)
    chosen: list[int] = []
    for _ in range(budget):
        idx = int(np.argmax(min_dist))
        chosen.append(idx)
        dist_new = np.sqrt(((unlabeled_features - unlabeled_features[idx]) ** 2).sum(-1))
        min_dist = np.minimum(min_dist, dist_new)
    return chosen


def rank_and_select(scores: list[ImageScore], budget: int) -> list[int]:
    """Budget highest scores; equal scores resolve to the smaller image id."""
    ranked = sorted(scores, key=lambda s: (-s.score, s.image_id))
    return [s.image_id for s in ranked[:budget]]


def _batched_predictions(model: CommitteeDetector, dataset: Dataset, ids: list[int]):
    """Yield (image_id, per-image prediction) in the given id order, eval mode."""
    was_training = model.training
    model.eval()
    try:
        with torch.inference_mode():
            for start in range(0, len(ids), INFERENCE_BATCH):
                chunk = ids[start : start + INFERENCE_BATCH]
                pred = model.forward(dataset.images(chunk))
                for j, image_id in enumerate(chunk):
                    yield image_id, pred.image(j)
    finally:
        if was_training:
            model.train()


def select(
    strategy: str,
    model: CommitteeDetector,
    pool: PoolState,
    dataset: Dataset,
    budget: int,
    top_k: int = 50,
    rng: np.random.Generator | None = None,
    weighted_selection: bool = False,
    gamma_weight: float = 1.0,
) -> SelectionResult:
    """Score every unlabeled image and pick the next batch to label.

    Inference runs over the unlabeled ids in ascending order, so results are
    deterministic for a fixed model and pool. The random strategy draws from
    ``rng`` and produces no scores.
    """
    unlabeled = sorted(pool.unlabeled_ids)
    if not unlabeled:
        raise ValueError("unlabeled pool is exhausted; nothing to select")
    budget = min(budget, len(unlabeled))

    if strategy == "random":
        if rng is None:
            raise ValueError("random strategy needs the run's seeded generator")
        picked = rng.choice(unlabeled, size=budget, replace=False)
        return SelectionResult("random", tuple(int(i) for i in picked))

    if strategy == "coreset":
        labeled = list(pool.labeled_ids)
        with torch.inference_mode():
            labeled_feats = _features_for(model, dataset, labeled)
            unlabeled_feats = _features_for(model, dataset, unlabeled)
        chosen = select_core_set(labeled_feats, unlabeled_feats, budget)
        return SelectionResult("coreset", tuple(unlabeled[i] for i in chosen))

    scores: list[ImageScore] = []
    for image_id, pred in _batched_predictions(model, dataset, unlabeled):
        if strategy == "committee":
            scores.append(
                score_image_committee(
                    pred,
                    top_k,
                    image_id=image_id,
                    weighted=weighted_selection,
                    gamma_weight=gamma_weight,
                )
            )
        elif strategy == "entropy":
            scores.append(score_image_entropy(pred, image_id=image_id))
        else:
            raise ValueError(f"unknown strategy {strategy!r}")
    selected = rank_and_select(scores, budget)
    return SelectionResult(strategy, tuple(selected), tuple(scores))


def _features_for(model: CommitteeDetector, dataset: Dataset, ids: list[int]) -> np.ndarray:
    feats = []
    for start in range(0, len(ids), INFERENCE_BATCH):
        chunk = ids[start : start + INFERENCE_BATCH]
        feats.append(model.image_features(dataset.images(chunk)))
    return np.concatenate(feats, axis=0) if feats else np.zeros((0, 1))
