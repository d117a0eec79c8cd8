"""Command-line entry points: generate, run, report, score-dump.

All randomness flows from seeds in the config file; no command reads entropy
from the environment. Run layout under --out:

    <out>/manifest.json
    <out>/<strategy>/seed_<s>/{config.yaml,run_meta.json,cycle_records.jsonl,
                               loss_log.jsonl,checkpoints/,scores/}
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import acquisition
from .config import (
    ExperimentConfig,
    config_hash,
    load_experiment_config,
)
from .dataset import build_dataset, load_dataset, save_dataset
from .loop import read_records, run_experiment
from .model import CommitteeDetector, load_checkpoint
from .reporting import write_report

logger = logging.getLogger(__name__)


def cmd_generate(config_path: str, out_dir: str, force: bool = False) -> Path:
    """Materialize the synthetic dataset plus its train/test split on disk."""
    config = load_experiment_config(config_path)
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()) and not force:
        raise SystemExit(f"refusing to overwrite non-empty {out}; pass --force to replace")
    dataset = build_dataset(
        config.dataset_seed, config.num_images, config.generator, config.test_fraction
    )
    save_dataset(dataset, out)
    logger.info(
        "wrote %d images (%d train / %d test) to %s",
        len(dataset.samples), len(dataset.train_ids), len(dataset.test_ids), out,
    )
    return out


def _seed_dir(out: Path, config: ExperimentConfig, seed: int) -> Path:
    return out / config.with_overrides(seed=seed).strategy_label / f"seed_{seed}"


def cmd_run(
    config_path: str,
    dataset_dir: str | None,
    out_dir: str,
    seeds: list[int] | None = None,
    strategies: list[str] | None = None,
    resume: bool = False,
) -> int:
    """Execute the experiment for every (strategy, seed); returns a shell exit code."""
    base = load_experiment_config(config_path)
    if dataset_dir is not None:
        dataset = load_dataset(dataset_dir)
    else:
        dataset = build_dataset(
            base.dataset_seed, base.num_images, base.generator, base.test_fraction
        )
    seeds = seeds if seeds is not None else [base.seed]
    strategy_specs = strategies if strategies is not None else [base.strategy]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    jobs: list[ExperimentConfig] = []
    for spec in strategy_specs:
        # "committee_unweighted" selects the committee strategy with the
        # background weighting ablated away
        if spec == "committee_unweighted":
            variant = {"strategy": "committee", "weighted_discrepancy": False}
        else:
            variant = {"strategy": spec}
        for seed in seeds:
            jobs.append(base.with_overrides(seed=seed, **variant))

    manifest = {
        "run_id": out.name,
        "config_hash": config_hash(base),
        "strategies": sorted({c.strategy_label for c in jobs}),
        "seeds": seeds,
        "status": {},
        "artifacts": {},
    }
    failures = 0
    for config in jobs:
        run_dir = _seed_dir(out, config, config.seed)
        key = f"{config.strategy_label}/seed_{config.seed}"
        try:
            run_dir.mkdir(parents=True, exist_ok=True)
            run_experiment(config, dataset=dataset, run_dir=run_dir, resume=resume)
            manifest["status"][key] = "completed"
        except Exception as exc:  # noqa: BLE001 - every failed seed must be reported
            logger.exception("run %s failed", key)
            manifest["status"][key] = f"failed: {exc}"
            failures += 1
        manifest["artifacts"][key] = str(run_dir)
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return 1 if failures else 0


def cmd_report(run_dirs: list[str], out_dir: str) -> int:
    try:
        summary = write_report([Path(d) for d in run_dirs], Path(out_dir))
    except ValueError as exc:
        logger.error("%s", exc)
        return 1
    for strategy, stats in sorted(summary["strategies"].items()):
        final = stats["map_50_mean"][-1]
        logger.info("%s: final mAP@0.5 = %.4f over seeds %s", strategy, final, stats["seeds"])
    return 0


def cmd_score_dump(
    checkpoint_path: str,
    dataset_dir: str,
    strategy: str,
    out_path: str,
    config_path: str | None = None,
) -> int:
    """Score every image with one strategy and dump descending-sorted records."""
    dataset = load_dataset(dataset_dir)
    config = load_experiment_config(config_path) if config_path else ExperimentConfig()
    detector_cfg = dataclasses.replace(
        config.detector,
        num_classes=config.generator.num_classes,
        committee_size=config.committee_size,
    )
    model = CommitteeDetector(detector_cfg, config.generator.image_size, config.generator.channels)
    load_checkpoint(model, checkpoint_path)
    model.eval()

    ids = sorted(s.image_id for s in dataset.samples)
    scores = []
    with torch.inference_mode():
        for start in range(0, len(ids), acquisition.INFERENCE_BATCH):
            chunk = ids[start : start + acquisition.INFERENCE_BATCH]
            pred = model.forward(dataset.images(chunk))
            for j, image_id in enumerate(chunk):
                per_image = pred.image(j)
                if strategy == "committee":
                    scores.append(
                        acquisition.score_image_committee(
                            per_image, config.top_instances, image_id=image_id
                        )
                    )
                elif strategy == "entropy":
                    scores.append(acquisition.score_image_entropy(per_image, image_id=image_id))
                else:
                    raise SystemExit(f"score-dump supports committee|entropy, not {strategy!r}")
    scores.sort(key=lambda s: (-s.score, s.image_id))
    with open(out_path, "w") as fh:
        for s in scores:
            fh.write(
                json.dumps(
                    {
                        "strategy": strategy,
                        "image_id": s.image_id,
                        "score": s.score,
                        "top_instances": [list(t) for t in s.top_instances[:5]],
                    }
                )
                + "\n"
            )
    logger.info("wrote %d scores to %s", len(scores), out_path)
    return 0


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _str_list(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="comal",
        description="Committee-driven active learning for a toy shape detector.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("generate", help="materialize the synthetic dataset")
    p_gen.add_argument("--config", required=True)
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--force", action="store_true")

    p_run = sub.add_parser("run", help="run the active-learning experiment")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--dataset", default=None, help="dataset dir from `comal generate`")
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--seeds", type=_int_list, default=None, help="comma-separated seeds")
    p_run.add_argument(
        "--strategy", type=_str_list, default=None,
        help="comma-separated strategies (committee, committee_unweighted, random, entropy, coreset)",
    )
    p_run.add_argument("--resume", action="store_true")

    p_rep = sub.add_parser("report", help="plots + summary from finished runs")
    p_rep.add_argument("run_dirs", nargs="+")
    p_rep.add_argument("--out", required=True)

    p_dump = sub.add_parser("score-dump", help="per-image uncertainty listing")
    p_dump.add_argument("--checkpoint", required=True)
    p_dump.add_argument("--dataset", required=True)
    p_dump.add_argument("--strategy", default="committee")
    p_dump.add_argument("--config", default=None)
    p_dump.add_argument("--out", required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if args.command == "generate":
        cmd_generate(args.config, args.out, force=args.force)
        return 0
    if args.command == "run":
        return cmd_run(
            args.config, args.dataset, args.out,
            seeds=args.seeds, strategies=args.strategy, resume=args.resume,
        )
    if args.command == "report":
        return cmd_report(args.run_dirs, args.out)
    if args.command == "score-dump":
        return cmd_score_dump(
            args.checkpoint, args.dataset, args.strategy, args.out, config_path=args.config
        )
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
