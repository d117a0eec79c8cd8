"""Committee-driven active learning for a small anchor-based shape detector."""

from .acquisition import (
    ImageScore,
    SelectionResult,
    rank_and_select,
    score_from_instance_values,
    score_image_committee,
    score_image_entropy,
    select,
    select_core_set,
)
from .anchors import AnchorGrid, InstanceTargets, build_anchors, match_targets
from .boxes import BBox, decode_boxes, encode_boxes, iou, iou_matrix, nms
from .config import (
    AnchorConfig,
    DetectorConfig,
    ExperimentConfig,
    GeneratorConfig,
    OptimizerConfig,
    config_hash,
    load_experiment_config,
)
from .dataset import (
    Dataset,
    SyntheticSample,
    build_dataset,
    generate_dataset,
    load_dataset,
    save_dataset,
)
from .evaluation import Detection, EvalResult, evaluate_map
from .loop import (
    CycleRecord,
    count_true_positive_instances,
    evaluate_detector,
    run_experiment,
    train_cycle,
)
from .losses import (
    LossBreakdown,
    assemble_total,
    committee_supervised_loss,
    focal_loss,
    image_discrepancy,
    instance_discrepancy,
    main_loss,
    smooth_l1,
)
from .model import CommitteeDetector, InstancePrediction, build_model
from .pool import PoolState, init_pool, promote

__all__ = [
    "AnchorConfig",
    "AnchorGrid",
    "BBox",
    "CommitteeDetector",
    "CycleRecord",
    "Dataset",
    "Detection",
    "DetectorConfig",
    "EvalResult",
    "ExperimentConfig",
    "GeneratorConfig",
    "ImageScore",
    "InstancePrediction",
    "InstanceTargets",
    "LossBreakdown",
    "OptimizerConfig",
    "PoolState",
    "SelectionResult",
    "SyntheticSample",
    "assemble_total",
    "build_anchors",
    "build_dataset",
    "build_model",
    "committee_supervised_loss",
    "config_hash",
    "count_true_positive_instances",
    "decode_boxes",
    "encode_boxes",
    "evaluate_detector",
    "evaluate_map",
    "focal_loss",
    "generate_dataset",
    "image_discrepancy",
    "init_pool",
    "instance_discrepancy",
    "iou",
    "iou_matrix",
    "load_dataset",
    "load_experiment_config",
    "main_loss",
    "match_targets",
    "nms",
    "promote",
    "rank_and_select",
    "run_experiment",
    "save_dataset",
    "score_from_instance_values",
    "score_image_committee",
    "score_image_entropy",
    "select",
    "select_core_set",
    "smooth_l1",
    "train_cycle",
]
