"""Aggregation of finished runs into plots and summary tables.

A report reads cycle records from one or more run directories (laid out as
<out>/<strategy>/seed_<s>/cycle_records.jsonl), then emits learning-curve and
selected-true-positive plots with mean +- std bands over seeds, a weighted
vs unweighted committee ablation table, and a machine-readable summary.
"""

from __future__ import annotations

import json
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .loop import CycleRecord, read_records

STRATEGY_COLORS = {
    "committee": "tab:red",
    "committee_unweighted": "tab:orange",
    "random": "tab:gray",
    "entropy": "tab:blue",
    "coreset": "tab:green",
}


def discover_runs(run_dirs: list[Path]) -> dict[str, dict[int, list[CycleRecord]]]:
    """Map strategy label -> seed -> records, scanning run directory trees."""
    runs: dict[str, dict[int, list[CycleRecord]]] = defaultdict(dict)
    for root in run_dirs:
        root = Path(root)
        for records_file in sorted(root.rglob("cycle_records.jsonl")):
            seed_dir = records_file.parent
            strategy_dir = seed_dir.parent
            try:
                seed = int(seed_dir.name.removeprefix("seed_"))
            except ValueError:
                continue
            records = read_records(records_file)
            if records:
                runs[strategy_dir.name][seed] = records
    return dict(runs)


def _stack_metric(per_seed: dict[int, list[CycleRecord]], metric) -> tuple[np.ndarray, np.ndarray, list[int]]:
    """Per-cycle mean/std of a record metric across seeds; ragged runs are cut
    to the shortest seed so bands stay comparable."""
    lengths = [len(r) for r in per_seed.values()]
    horizon = min(lengths)
    rows = np.array(
        [[metric(rec) for rec in records[:horizon]] for records in per_seed.values()],
        dtype=np.float64,
    )
    labeled = [records[:horizon] for records in per_seed.values()][0]
    counts = [rec.labeled_count for rec in labeled]
    return rows.mean(axis=0), rows.std(axis=0), counts


def cumulative_true_positives(records: list[CycleRecord]) -> list[int]:
    totals, running = [], 0
    for rec in records:
        running += rec.true_positive_instances_selected
        totals.append(running)
    return totals


def build_summary(runs: dict[str, dict[int, list[CycleRecord]]]) -> dict:
    summary: dict = {"strategies": {}}
    for strategy, per_seed in sorted(runs.items()):
        mean_map, std_map, counts = _stack_metric(per_seed, lambda r: r.map_50)
        horizon = len(counts)
        cum = np.array(
            [cumulative_true_positives(recs[:horizon]) for recs in per_seed.values()],
            dtype=np.float64,
        )
        gaps = {
            seed: len(recs) for seed, recs in per_seed.items() if len(recs) != horizon
        }
        summary["strategies"][strategy] = {
            "seeds": sorted(per_seed),
            "labeled_counts": counts,
            "map_50_mean": mean_map.tolist(),
            "map_50_std": std_map.tolist(),
            "cumulative_true_positive_mean": cum.mean(axis=0).tolist(),
            "cumulative_true_positive_std": cum.std(axis=0).tolist(),
            "cycle_count_gaps": gaps,
        }
    return summary


def plot_learning_curves(summary: dict, out_path: Path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for strategy, stats in sorted(summary["strategies"].items()):
        x = stats["labeled_counts"]
        mean = np.array(stats["map_50_mean"])
        std = np.array(stats["map_50_std"])
        color = STRATEGY_COLORS.get(strategy)
        ax.plot(x, mean, marker="o", label=strategy, color=color)
        ax.fill_between(x, mean - std, mean + std, alpha=0.2, color=color)
    ax.set_xlabel("labeled images")
    ax.set_ylabel("mAP@0.5")
    ax.set_title("Detection quality vs labeled pool size (mean +- std over seeds)")
    ax.grid(True, alpha=0.4)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=130)
    plt.close(fig)


def plot_true_positive_counts(summary: dict, out_path: Path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for strategy, stats in sorted(summary["strategies"].items()):
        x = stats["labeled_counts"]
        mean = np.array(stats["cumulative_true_positive_mean"])
        std = np.array(stats["cumulative_true_positive_std"])
        color = STRATEGY_COLORS.get(strategy)
        ax.plot(x, mean, marker="s", label=strategy, color=color)
        ax.fill_between(x, mean - std, mean + std, alpha=0.2, color=color)
    ax.set_xlabel("labeled images")
    ax.set_ylabel("cumulative true-positive instances selected")
    ax.set_title("Positive instances acquired per cycle (mean +- std over seeds)")
    ax.grid(True, alpha=0.4)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=130)
    plt.close(fig)


def ablation_table(summary: dict) -> str:
    """Markdown table comparing the weighted committee against its ablation."""
    strategies = summary["strategies"]
    rows = [s for s in ("committee", "committee_unweighted") if s in strategies]
    if not rows:
        return "no committee runs found\n"
    counts = strategies[rows[0]]["labeled_counts"]
    header = "| strategy | " + " | ".join(str(c) for c in counts) + " |"
    sep = "|---" * (len(counts) + 1) + "|"
    lines = [header, sep]
    for strategy in rows:
        cells = " | ".join(f"{v:.4f}" for v in strategies[strategy]["map_50_mean"])
        lines.append(f"| {strategy} | {cells} |")
    return "\n".join(lines) + "\n"


def write_report(run_dirs: list[Path], out_dir: Path) -> dict:
    """Build all report artifacts; returns the summary dict."""
    runs = discover_runs(run_dirs)
    if not runs:
        raise ValueError(f"no cycle records found under {[str(d) for d in run_dirs]}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = build_summary(runs)
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    plot_learning_curves(summary, out_dir / "learning_curves.png")
    plot_true_positive_counts(summary, out_dir / "true_positive_instances.png")
    (out_dir / "ablation.md").write_text(ablation_table(summary))
    return summary
