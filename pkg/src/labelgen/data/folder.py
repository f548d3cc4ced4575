"""Image-folder layout: root/<dataset>/<split>/<label_with_underscores>/*.png."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from ..tokenizer import canonicalize
from .registry import Corpus, TaskSpec


def label_to_dirname(label: str) -> str:
    return canonicalize(label).replace(" ", "_")


def dirname_to_label(name: str) -> str:
    return canonicalize(name.replace("_", " "))


def export_corpus(corpus: Corpus, root: str | Path) -> int:
    """Write ``corpus`` as 8-bit RGB PNGs; returns the number of files."""
    base = Path(root) / corpus.dataset / corpus.split
    for k in range(len(corpus)):
        d = base / label_to_dirname(corpus.label_of(k))
        d.mkdir(parents=True, exist_ok=True)
        arr = np.round(np.clip(corpus.images[k], 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0)
        Image.fromarray(arr, mode="RGB").save(d / f"{k:06d}.png", optimize=False)
    return len(corpus)


def load_corpus(root: str | Path, dataset: str, split: str, task: TaskSpec, image_size: int | None = None) -> Corpus:
    """Read one (dataset, split) folder; class directories must name task labels."""
    from .augment import resize

    base = Path(root) / dataset / split
    if not base.is_dir():
        raise FileNotFoundError(f"missing data directory {base}")
    images, class_ids = [], []
    for d in sorted(p for p in base.iterdir() if p.is_dir()):
        label = dirname_to_label(d.name)
        if label not in task.labels:
            raise ValueError(f"{d}: {label!r} is not a label of task {task.name}")
        cls = task.labels.index(label)
        for f in sorted(d.glob("*.png")):
            with Image.open(f) as im:
                arr = np.asarray(im.convert("RGB"), dtype=np.float32).transpose(2, 0, 1) / 255.0
            if image_size is not None:
                arr = resize(arr, image_size)
            images.append(arr)
            class_ids.append(cls)
    if not images:
        raise FileNotFoundError(f"no images under {base}")
    return Corpus(dataset, task.name, split, np.stack(images).astype(np.float32),
                  np.asarray(class_ids, dtype=np.int64), task.labels)
