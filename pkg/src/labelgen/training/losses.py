"""Training objectives for the generative and head-based settings."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from ..model.bundle import ModelBundle
from ..model.network import classify_head, extract_features, forward_teacher_forced
from ..numerics import ops
from ..numerics.tensor import Tensor
from ..tokenizer import PAD


def loss_generative(bundle: ModelBundle, images, tokens: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of the label tokens, PAD positions excluded."""
    logits = forward_teacher_forced(bundle, images, tokens)
    return ops.cross_entropy(logits, tokens, ignore_index=PAD)


def loss_heads(bundle: ModelBundle, images, task_names: Sequence[str], class_ids: np.ndarray) -> Tensor:
    """Cross-entropy through each sample's own task head, averaged over the batch.

    Samples are routed by task, so a head whose task is absent from the batch
    is never touched and receives no gradient.
    """
    task_names = np.asarray(task_names, dtype=object)
    class_ids = np.asarray(class_ids, dtype=np.int64)
    n = len(class_ids)
    feats = extract_features(bundle, images)
    total = None
    for name in bundle.head_names:
        idx = np.flatnonzero(task_names == name)
        if idx.size == 0:
            continue
        logits = classify_head(bundle, ops.getitem(feats, idx), name)
        term = ops.cross_entropy(logits, class_ids[idx]) * (idx.size / n)
        total = term if total is None else total + term
    unknown = set(task_names) - set(bundle.head_names)
    if unknown:
        raise KeyError(f"no head for task(s) {sorted(unknown)}")
    return total
