"""Labeled/unlabeled pool bookkeeping for the active-learning loop."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PoolState:
    """Immutable partition of image ids into labeled and unlabeled sets.

    ``labeled_ids`` preserves acquisition order (initial pool first, then each
    cycle's selections); ``unlabeled_ids`` stays sorted ascending.
    """

    labeled_ids: tuple[int, ...]
    unlabeled_ids: tuple[int, ...]
    cycle_index: int
    budget_per_cycle: int

    def __post_init__(self):
        labeled = set(self.labeled_ids)
        unlabeled = set(self.unlabeled_ids)
        if labeled & unlabeled:
            raise ValueError(f"pool overlap: {sorted(labeled & unlabeled)}")
        if len(labeled) != len(self.labeled_ids) or len(unlabeled) != len(self.unlabeled_ids):
            raise ValueError("duplicate ids within a pool side")

    @property
    def all_ids(self) -> set[int]:
        return set(self.labeled_ids) | set(self.unlabeled_ids)

    @property
    def labeled_count(self) -> int:
        return len(self.labeled_ids)


def init_pool(
    ids: int | list[int],
    initial_fraction: float,
    budget_per_cycle: int,
    seed: int,
) -> PoolState:
    """Seed the pool with a uniformly random initial labeled set.

    ``ids`` may be an explicit id list or an integer Q meaning range(Q).
    """
    if isinstance(ids, int):
        ids = list(range(ids))
    if not 0.0 < initial_fraction < 1.0:
        raise ValueError("initial_fraction must lie in (0, 1)")
    if budget_per_cycle <= 0:
        raise ValueError("budget_per_cycle must be positive")
    ids = sorted(ids)
    n_initial = int(round(initial_fraction * len(ids)))
    rng = np.random.default_rng(seed)
    labeled = sorted(int(i) for i in rng.choice(ids, size=n_initial, replace=False))
    unlabeled = sorted(set(ids) - set(labeled))
    return PoolState(
        labeled_ids=tuple(labeled),
        unlabeled_ids=tuple(unlabeled),
        cycle_index=0,
        budget_per_cycle=budget_per_cycle,
    )


def promote(pool: PoolState, selected_ids: list[int]) -> PoolState:
    """Move selected ids from unlabeled to labeled and advance the cycle."""
    selected = list(selected_ids)
    if len(set(selected)) != len(selected):
        raise ValueError("selected_ids contains duplicates")
    if len(selected) > pool.budget_per_cycle:
        raise ValueError(
            f"selection of {len(selected)} exceeds budget {pool.budget_per_cycle}"
        )
    unlabeled = set(pool.unlabeled_ids)
    bad = [i for i in selected if i not in unlabeled]
    if bad:
        raise ValueError(f"ids not in the unlabeled pool: {bad}")
    return PoolState(
        labeled_ids=pool.labeled_ids + tuple(selected),
        unlabeled_ids=tuple(sorted(unlabeled - set(selected))),
        cycle_index=pool.cycle_index + 1,
        budget_per_cycle=pool.budget_per_cycle,
    )
