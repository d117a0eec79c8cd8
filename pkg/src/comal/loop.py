"""The active-learning loop: per-cycle training, evaluation, selection, promotion.

Each cycle cold-restarts the model, trains it in two phases (supervised on the
labeled pool, then committee-only disagreement maximization on the unlabeled
pool), evaluates on the held-out test split, selects the next batch, and grows
the labeled pool. All per-cycle randomness (model init, batch order, random
selection) derives from (seed, purpose, cycle), so interrupted runs resume to
bit-identical results.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .acquisition import SelectionResult, select
from .anchors import AnchorGrid, InstanceTargets, build_anchors, match_targets
from .config import ExperimentConfig, config_hash, config_to_dict, save_config
from .dataset import Dataset, build_dataset
from .evaluation import EvalResult, evaluate_map
from .losses import (
    TargetBatch,
    assemble_total,
    committee_supervised_loss,
    image_discrepancy,
    main_loss,
)
from .model import CommitteeDetector, parameter_hash, save_checkpoint
from .pool import PoolState, init_pool, promote

logger = logging.getLogger(__name__)

# purpose tags for derived per-cycle seeds
_POOL, _MODEL, _SHUFFLE, _RANDOM_SELECT = 1, 2, 3, 4

INFERENCE_BATCH = 32


def derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


@dataclass(frozen=True)
class CycleRecord:
    """Outcome of one active-learning cycle."""

    cycle_index: int
    labeled_count: int
    map_50: float
    selected_ids: tuple[int, ...]
    true_positive_instances_selected: int
    wall_clock_seconds: float
    loss_curve_ref: str
    diagnostics: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "cycle_index": self.cycle_index,
            "labeled_count": self.labeled_count,
            "map_50": self.map_50,
            "selected_ids": list(self.selected_ids),
            "true_positive_instances_selected": self.true_positive_instances_selected,
            "wall_clock_seconds": self.wall_clock_seconds,
            "loss_curve_ref": self.loss_curve_ref,
            "diagnostics": self.diagnostics,
        }
        return json.dumps(payload)

    @staticmethod
    def from_dict(data: dict) -> "CycleRecord":
        return CycleRecord(
            cycle_index=int(data["cycle_index"]),
            labeled_count=int(data["labeled_count"]),
            map_50=float(data["map_50"]),
            selected_ids=tuple(int(i) for i in data["selected_ids"]),
            true_positive_instances_selected=int(data["true_positive_instances_selected"]),
            wall_clock_seconds=float(data["wall_clock_seconds"]),
            loss_curve_ref=str(data["loss_curve_ref"]),
            diagnostics=data.get("diagnostics", {}),
        )


def records_equal(a: CycleRecord, b: CycleRecord) -> bool:
    """Semantic record equality; wall-clock timing is the one excluded field."""
    return (
        a.cycle_index == b.cycle_index
        and a.labeled_count == b.labeled_count
        and a.map_50 == b.map_50
        and a.selected_ids == b.selected_ids
        and a.true_positive_instances_selected == b.true_positive_instances_selected
        and a.loss_curve_ref == b.loss_curve_ref
        and a.diagnostics == b.diagnostics
    )


class TargetCache:
    """Lazily matched per-image targets; annotations and anchors never change."""

    def __init__(self, dataset: Dataset, anchors: AnchorGrid, num_classes: int,
                 positive_iou: float, negative_iou: float):
        self._dataset = dataset
        self._anchors = anchors
        self._num_classes = num_classes
        self._positive_iou = positive_iou
        self._negative_iou = negative_iou
        self._cache: dict[int, InstanceTargets] = {}

    def get(self, image_id: int) -> InstanceTargets:
        if image_id not in self._cache:
            self._cache[image_id] = match_targets(
                self._anchors,
                self._dataset.sample(image_id).annotations,
                num_classes=self._num_classes,
                positive_iou=self._positive_iou,
                negative_iou=self._negative_iou,
            )
        return self._cache[image_id]


def count_true_positive_instances(
    selected_ids, dataset: Dataset, targets: TargetCache
) -> int:
    """Positive anchors inside the selected images under the matching rule."""
    return sum(targets.get(image_id).num_positive for image_id in selected_ids)


def _check_finite(value: torch.Tensor, context: str) -> None:
    if not torch.isfinite(value):
        raise RuntimeError(f"non-finite loss during {context}: {float(value)}")


def _epoch_schedule(config: ExperimentConfig) -> list[str]:
    """Phase order within a cycle; sequential unless interleaving is enabled."""
    if not config.interleave_phases or config.epochs_unlabeled == 0:
        return ["labeled"] * config.epochs_labeled + ["unlabeled"] * config.epochs_unlabeled
    schedule = ["labeled"] * config.epochs_labeled
    gap = max(1, config.epochs_labeled // config.epochs_unlabeled)
    for i in range(config.epochs_unlabeled):
        schedule.insert(min(len(schedule), (i + 1) * gap + i), "unlabeled")
    return schedule


@torch.inference_mode()
def _probe_discrepancy(
    model: CommitteeDetector,
    dataset: Dataset,
    probe_ids: list[int],
    targets: TargetCache,
) -> dict:
    """Disagreement statistics on a fixed probe batch (eval mode, no updates)."""
    from .losses import instance_discrepancy

    model.eval()
    d_img_values: list[float] = []
    pos_values: list[np.ndarray] = []
    bg_values: list[np.ndarray] = []
    for start in range(0, len(probe_ids), INFERENCE_BATCH):
        chunk = probe_ids[start : start + INFERENCE_BATCH]
        pred = model.forward(dataset.images(chunk))
        d_img_values.extend(image_discrepancy(pred, weighted=False).cpu().numpy().tolist())
        d_ins = instance_discrepancy(pred.committee_cls).cpu().numpy()
        for j, image_id in enumerate(chunk):
            t = targets.get(image_id)
            background = ~t.positive_mask & ~t.ignore_mask
            pos_values.append(d_ins[j][t.positive_mask])
            bg_values.append(d_ins[j][background])
    model.train()
    positive = np.concatenate(pos_values) if pos_values else np.zeros(0)
    background = np.concatenate(bg_values) if bg_values else np.zeros(0)
    mean_pos = float(positive.mean()) if positive.size else 0.0
    mean_bg = float(background.mean()) if background.size else 0.0
    return {
        "mean_image_discrepancy": float(np.mean(d_img_values)),
        "mean_d_positive": mean_pos,
        "mean_d_background": mean_bg,
        "background_to_positive_ratio": mean_bg / mean_pos if mean_pos > 0 else float("inf"),
    }


def train_cycle(
    model: CommitteeDetector,
    pool: PoolState,
    dataset: Dataset,
    config: ExperimentConfig,
    targets: TargetCache,
    cycle_index: int,
    probe_ids: list[int],
) -> tuple[dict, list[dict]]:
    """Two-phase training for one cycle.

    Phase one minimizes the supervised main + committee losses over the
    labeled pool, updating everything. Phase two maximizes committee
    disagreement over the unlabeled pool, updating only committee heads; the
    backbone and main head are left bit-identical, which the returned
    diagnostics prove via parameter hashes taken after each phase.
    """
    if not pool.labeled_ids:
        raise ValueError("labeled pool is empty; nothing to train on")
    opt_cfg = config.optimizer
    opt_all = torch.optim.SGD(
        model.parameters(),
        lr=opt_cfg.learning_rate,
        momentum=opt_cfg.momentum,
        weight_decay=opt_cfg.weight_decay,
    )
    opt_committee = torch.optim.SGD(
        model.committee_parameters(),
        lr=opt_cfg.learning_rate,
        momentum=opt_cfg.momentum,
        weight_decay=opt_cfg.weight_decay,
    )
    shuffle_rng = np.random.default_rng(
        np.random.SeedSequence([config.seed, _SHUFFLE, cycle_index])
    )
    loss_rows: list[dict] = []
    diagnostics: dict = {}
    step = 0
    model.train()

    def batches(ids):
        order = shuffle_rng.permutation(ids)
        for start in range(0, len(order), config.batch_size):
            yield [int(i) for i in order[start : start + config.batch_size]]

    def log_row(phase: str, breakdown) -> None:
        row = {"cycle": cycle_index, "phase": phase, "step": step}
        row.update(breakdown.as_dict())
        loss_rows.append(row)

    schedule = _epoch_schedule(config)
    labeled_epochs_left = schedule.count("labeled")
    if labeled_epochs_left == 0:
        diagnostics["post_a"] = _phase_snapshot(model)
        diagnostics["probe_post_a"] = _probe_discrepancy(model, dataset, probe_ids, targets)
    for phase in schedule:
        if phase == "labeled":
            for batch_ids in batches(list(pool.labeled_ids)):
                images = torch.from_numpy(dataset.images(batch_ids))
                batch_targets = TargetBatch([targets.get(i) for i in batch_ids])
                pred = model.forward(images)
                l_main = main_loss(pred, batch_targets)
                l_com = committee_supervised_loss(pred, batch_targets)
                loss = l_main + l_com
                _check_finite(loss, f"cycle {cycle_index} labeled phase step {step}")
                opt_all.zero_grad()
                loss.backward()
                opt_all.step()
                log_row(
                    "labeled",
                    assemble_total(
                        float(l_main), float(l_com), 0.0,
                        config.lambda_discrepancy, config.gamma_weight,
                    ),
                )
                step += 1
            labeled_epochs_left -= 1
            if labeled_epochs_left == 0:
                diagnostics["post_a"] = _phase_snapshot(model)
                diagnostics["probe_post_a"] = _probe_discrepancy(
                    model, dataset, probe_ids, targets
                )
        else:
            if not pool.unlabeled_ids:
                continue
            for batch_ids in batches(list(pool.unlabeled_ids)):
                images = torch.from_numpy(dataset.images(batch_ids))
                pred = model.forward(images)
                d_com = image_discrepancy(
                    pred,
                    weighted=config.weighted_discrepancy,
                    gamma_weight=config.gamma_weight,
                ).mean()
                loss = -config.lambda_discrepancy * d_com
                _check_finite(loss, f"cycle {cycle_index} unlabeled phase step {step}")
                opt_committee.zero_grad()
                loss.backward()
                opt_committee.step()
                log_row(
                    "unlabeled",
                    assemble_total(
                        0.0, 0.0, float(d_com),
                        config.lambda_discrepancy, config.gamma_weight,
                    ),
                )
                step += 1

    diagnostics["post_b"] = _phase_snapshot(model)
    diagnostics["probe_post_b"] = _probe_discrepancy(model, dataset, probe_ids, targets)
    diagnostics["backbone_unchanged_in_phase_b"] = (
        diagnostics["post_a"]["backbone"] == diagnostics["post_b"]["backbone"]
    )
    diagnostics["main_head_unchanged_in_phase_b"] = (
        diagnostics["post_a"]["main_head"] == diagnostics["post_b"]["main_head"]
    )
    diagnostics["committee_changed_in_phase_b"] = (
        diagnostics["post_a"]["committee"] != diagnostics["post_b"]["committee"]
    )
    return diagnostics, loss_rows


def _phase_snapshot(model: CommitteeDetector) -> dict:
    return {
        "backbone": parameter_hash(model.backbone_parameters()),
        "main_head": parameter_hash(model.main_head_parameters()),
        "committee": parameter_hash(model.committee_parameters()),
    }


def evaluate_detector(
    model: CommitteeDetector, dataset: Dataset, ids: list[int], iou_threshold: float = 0.5
) -> EvalResult:
    """Predict over the given images and score against their ground truth."""
    cfg = model.config
    predictions = []
    model.eval()
    with torch.inference_mode():
        for start in range(0, len(ids), INFERENCE_BATCH):
            chunk = ids[start : start + INFERENCE_BATCH]
            pred = model.forward(dataset.images(chunk))
            for j, image_id in enumerate(chunk):
                for det in model.decode_detections(
                    pred.image(j), cfg.score_threshold, cfg.nms_iou
                ):
                    predictions.append((image_id, det))
    return evaluate_map(predictions, dataset.ground_truth(ids), iou_threshold)


def _append_record(path: Path, record: CycleRecord) -> None:
    # one line per record; readers ignore a partial trailing line, so a crash
    # mid-write never corrupts earlier records
    with open(path, "a") as fh:
        fh.write(record.to_json() + "\n")
        fh.flush()


def read_records(path: Path) -> list[CycleRecord]:
    if not Path(path).exists():
        return []
    records = []
    text = Path(path).read_text()
    body, _, tail = text.rpartition("\n")
    del tail  # anything after the final newline is an interrupted write
    for line in body.split("\n"):
        if line.strip():
            records.append(CycleRecord.from_dict(json.loads(line)))
    return records


def _write_scores(path: Path, cycle_index: int, strategy: str, selection) -> None:
    with open(path, "w") as fh:
        for score in selection.all_scores:
            row = {
                "cycle": cycle_index,
                "strategy": strategy,
                "image_id": score.image_id,
                "score": score.score,
                "top_instances": [list(t) for t in score.top_instances[:5]],
            }
            fh.write(json.dumps(row) + "\n")


def run_experiment(
    config: ExperimentConfig,
    dataset: Dataset | None = None,
    run_dir: str | Path | None = None,
    resume: bool = False,
) -> list[CycleRecord]:
    """Run the full loop for one seed: num_cycles + 1 train/eval/select rounds.

    With ``run_dir`` set, the directory receives a config snapshot, per-cycle
    checkpoints, score dumps, the loss log, and the cycle records; ``resume``
    replays completed cycles from the records and continues. Deterministic for
    a fixed (config, dataset).
    """
    config.validate()
    if dataset is None:
        dataset = build_dataset(
            config.dataset_seed, config.num_images, config.generator, config.test_fraction
        )
    chash = config_hash(config)

    records: list[CycleRecord] = []
    records_path = loss_path = None
    if run_dir is not None:
        run_dir = Path(run_dir)
        (run_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
        (run_dir / "scores").mkdir(exist_ok=True)
        records_path = run_dir / "cycle_records.jsonl"
        loss_path = run_dir / "loss_log.jsonl"
        meta_path = run_dir / "run_meta.json"
        if resume and meta_path.exists():
            stored = json.loads(meta_path.read_text())
            if stored["config_hash"] != chash:
                raise ValueError(
                    f"refusing to resume: run dir built with config {stored['config_hash']}, "
                    f"current config is {chash}"
                )
            records = read_records(records_path)
        else:
            save_config(config, run_dir / "config.yaml")
            meta_path.write_text(
                json.dumps({"config_hash": chash, "config": config_to_dict(config)}, indent=2)
            )
            records_path.write_text("")
            loss_path.write_text("")

    pool = init_pool(
        dataset.train_ids,
        config.initial_fraction,
        config.budget_per_cycle,
        derived_seed(config.seed, _POOL),
    )
    detector_cfg = dataclasses.replace(
        config.detector,
        num_classes=config.generator.num_classes,
        committee_size=config.committee_size,
    )
    anchors = build_anchors(config.generator.image_size, detector_cfg.anchors)
    targets = TargetCache(
        dataset, anchors, detector_cfg.num_classes,
        detector_cfg.positive_iou, detector_cfg.negative_iou,
    )
    probe_ids = list(dataset.test_ids[: config.probe_size])

    for done in records:  # replay pool transitions for resumed runs
        if done.selected_ids:
            pool = promote(pool, list(done.selected_ids))

    model: CommitteeDetector | None = None
    for cycle_index in range(len(records), config.num_cycles + 1):
        start_time = time.perf_counter()
        torch.manual_seed(derived_seed(config.seed, _MODEL, cycle_index))
        if model is None or not config.warm_start:
            model = CommitteeDetector(
                detector_cfg, config.generator.image_size, config.generator.channels
            )
        diagnostics, loss_rows = train_cycle(
            model, pool, dataset, config, targets, cycle_index, probe_ids
        )
        eval_result = evaluate_detector(model, dataset, dataset.test_ids)

        if pool.unlabeled_ids:
            selection = select(
                config.strategy,
                model,
                pool,
                dataset,
                budget=config.budget_per_cycle,
                top_k=config.top_instances,
                rng=np.random.default_rng(
                    np.random.SeedSequence([config.seed, _RANDOM_SELECT, cycle_index])
                ),
                weighted_selection=config.weighted_selection,
                gamma_weight=config.gamma_weight,
            )
        else:
            selection = SelectionResult(config.strategy, ())
        tp_count = count_true_positive_instances(selection.selected_ids, dataset, targets)

        record = CycleRecord(
            cycle_index=cycle_index,
            labeled_count=pool.labeled_count,
            map_50=eval_result.map_50,
            selected_ids=selection.selected_ids,
            true_positive_instances_selected=tp_count,
            wall_clock_seconds=time.perf_counter() - start_time,
            loss_curve_ref="loss_log.jsonl" if run_dir is not None else "",
            diagnostics={
                "per_class_ap": {str(k): v for k, v in eval_result.per_class_ap.items()},
                **{k: v for k, v in diagnostics.items() if not k.startswith("post_")},
                "phase_hashes": {"post_a": diagnostics["post_a"], "post_b": diagnostics["post_b"]},
            },
        )
        records.append(record)
        logger.info(
            "cycle %d: labeled=%d map50=%.4f selected=%d tp_instances=%d (%.1fs)",
            cycle_index, record.labeled_count, record.map_50,
            len(record.selected_ids), tp_count, record.wall_clock_seconds,
        )
        if run_dir is not None:
            with open(loss_path, "a") as fh:
                for row in loss_rows:
                    fh.write(json.dumps(row) + "\n")
            _write_scores(
                run_dir / "scores" / f"cycle_{cycle_index:02d}.jsonl",
                cycle_index, config.strategy_label, selection,
            )
            save_checkpoint(
                model, run_dir / "checkpoints" / f"cycle_{cycle_index:02d}.npz",
                chash, cycle_index,
            )
            _append_record(records_path, record)
        if selection.selected_ids:
            pool = promote(pool, list(selection.selected_ids))

    return records
