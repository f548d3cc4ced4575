"""Training pools and shuffled batch streams."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from ..numerics.rng import Rng, derive_seed
from .registry import Corpus

E_TS, E_TA, E_TAG = "E_TS", "E_TA", "E_TAG"
SETTINGS = (E_TS, E_TA, E_TAG)


@dataclass
class Pool:
    """Several corpora concatenated for joint sampling."""

    images: np.ndarray
    class_ids: np.ndarray
    task_names: np.ndarray  # [N] object array of task names
    dataset_names: np.ndarray
    labels: list[str]  # label text per sample

    def __len__(self) -> int:
        return len(self.class_ids)

    @classmethod
    def from_corpora(cls, corpora: Sequence[Corpus]) -> "Pool":
        corpora = [c for c in corpora if len(c)]
        if not corpora:
            raise ValueError("empty corpus")
        return cls(
            images=np.concatenate([c.images for c in corpora]),
            class_ids=np.concatenate([c.class_ids for c in corpora]),
            task_names=np.concatenate([np.full(len(c), c.task, dtype=object) for c in corpora]),
            dataset_names=np.concatenate([np.full(len(c), c.dataset, dtype=object) for c in corpora]),
            labels=[c.label_of(k) for c in corpora for k in range(len(c))],
        )


@dataclass
class Batch:
    indices: np.ndarray
    images: np.ndarray
    class_ids: np.ndarray
    task_names: np.ndarray
    labels: list[str]


def make_batches(pool: Pool, batch_size: int, setting: str, seed: int, epoch: int = 0,
                 exclude_tasks: Sequence[str] = ()) -> Iterator[Batch]:
    """One epoch of shuffled batches; order is a function of (seed, epoch) only.

    E_TS pools must hold a single task.  ``exclude_tasks`` drops every sample
    of the named tasks from this epoch's stream.
    """
    if len(pool) == 0:
        raise ValueError("empty corpus")
    if setting not in SETTINGS:
        raise ValueError(f"unknown setting {setting!r}")
    if setting == E_TS and len(set(pool.task_names)) != 1:
        raise ValueError("E_TS streams exactly one task")
    order = Rng(derive_seed(seed, "batches", epoch)).permutation(len(pool))
    if exclude_tasks:
        keep = ~np.isin(pool.task_names[order], list(exclude_tasks))
        order = order[keep]
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        yield Batch(idx, pool.images[idx], pool.class_ids[idx], pool.task_names[idx],
                    [pool.labels[i] for i in idx])
