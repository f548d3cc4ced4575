"""Procedural stand-in images with class structure recoverable by construction.

Each (task, class) pair gets its own texture family:

* a task-specific base hue,
* a class-specific brightness level,
* sinusoidal stripes whose spatial frequency grows with the class index
  (random orientation and phase per sample),
* dark round "nuclei" blobs, class index + 1 of them, at random positions,
* additive Gaussian noise.
"""
from __future__ import annotations

import numpy as np

from ..numerics.rng import Rng, derive_seed
from .registry import EXTERNAL_TEST, Corpus, DatasetSpec, Registry

DEFAULT_PER_CLASS = {"train": 200, "val": 50, "test": 50}

TASK_HUES = np.array([
    [0.92, 0.48, 0.62],
    [0.58, 0.42, 0.86],
    [0.95, 0.66, 0.30],
    [0.36, 0.78, 0.70],
    [0.80, 0.80, 0.40],
    [0.45, 0.60, 0.95],
])
NUCLEUS_COLOR = np.array([0.22, 0.12, 0.32])


def synth_image(task_index: int, class_index: int, num_classes: int, size: int, rng: Rng) -> np.ndarray:
    """One [3, size, size] float32 image in [0, 1]."""
    hue = TASK_HUES[task_index % len(TASK_HUES)]
    frac = class_index / max(num_classes - 1, 1)
    level = 0.42 + 0.5 * frac
    cycles = 2.0 + 1.5 * class_index

    theta = rng.uniform(0.0, np.pi)
    phase = rng.uniform(0.0, 2 * np.pi)
    coords = (np.arange(size) + 0.5) / size
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    wave = np.sin(2 * np.pi * cycles * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
    shade = level * (0.78 + 0.22 * wave)
    img = hue[:, None, None] * shade[None]

    n_blobs = class_index + 1
    centres = rng.uniform(0.1, 0.9, size=(n_blobs, 2)) * size
    radii = rng.uniform(0.05, 0.08, size=n_blobs) * size
    pix = np.arange(size) + 0.5
    mask = np.zeros((size, size))
    for (cy, cx), r in zip(centres, radii):
        d2 = (pix[:, None] - cy) ** 2 + (pix[None, :] - cx) ** 2
        mask = np.maximum(mask, np.exp(-d2 / (2 * (0.6 * r) ** 2)))
    img = img * (1 - mask) + NUCLEUS_COLOR[:, None, None] * mask

    img = img + rng.normal(0.0, 0.03, size=img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def synth_generate(spec: DatasetSpec, registry: Registry, image_size: int = 64, seed: int = 0,
                   per_class: dict[str, int] | None = None) -> dict[str, Corpus]:
    """Build every split of ``spec``; deterministic per (seed, dataset, split, index).

    Samples are laid out class-major: the first ``per_class[split]`` samples are
    class 0, and so on.
    """
    if image_size < 16:
        raise ValueError(f"image_size must be >= 16, got {image_size}")
    per_class = dict(DEFAULT_PER_CLASS if per_class is None else per_class)
    task = registry.task(spec.task)
    t_idx = registry.task_index(spec.task)
    splits = ("test",) if spec.role == EXTERNAL_TEST else tuple(s for s in spec.splits if per_class.get(s, 0) > 0)
    out = {}
    for split in splits:
        n = per_class[split]
        if n <= 0:
            continue
        K = task.num_classes
        images = np.empty((n * K, 3, image_size, image_size), dtype=np.float32)
        class_ids = np.repeat(np.arange(K), n).astype(np.int64)
        for k in range(n * K):
            rng = Rng(derive_seed(seed, "synth", spec.name, split, k))
            images[k] = synth_image(t_idx, int(class_ids[k]), K, image_size, rng)
        out[split] = Corpus(spec.name, spec.task, split, images, class_ids, task.labels,
                            meta={"seed": seed, "per_class": n, "image_size": image_size})
    return out


def synth_all(registry: Registry, image_size: int = 64, seed: int = 0,
              per_class: dict[str, int] | None = None) -> dict[tuple[str, str], Corpus]:
    """Corpora for every registered dataset keyed by (dataset, split)."""
    corpora = {}
    for spec in registry.datasets:
        for split, corpus in synth_generate(spec, registry, image_size, seed, per_class).items():
            corpora[(spec.name, split)] = corpus
    return corpora


def downsample(images: np.ndarray, factor_to: int = 8) -> np.ndarray:
    """Block-average [N, C, H, W] images to [N, C, factor_to, factor_to]."""
    n, c, h, w = images.shape
    bh, bw = h // factor_to, w // factor_to
    cropped = images[:, :, :bh * factor_to, :bw * factor_to]
    return cropped.reshape(n, c, factor_to, bh, factor_to, bw).mean(axis=(3, 5))


def nearest_centroid_accuracy(corpus: Corpus, grid: int = 8) -> float:
    """Train-set accuracy of a nearest-centroid classifier on block-averaged pixels."""
    feats = downsample(corpus.images, grid).reshape(len(corpus), -1).astype(np.float64)
    classes = np.unique(corpus.class_ids)
    centroids = np.stack([feats[corpus.class_ids == c].mean(axis=0) for c in classes])
    d = ((feats[:, None, :] - centroids[None]) ** 2).sum(axis=-1)
    pred = classes[np.argmin(d, axis=1)]
    return float((pred == corpus.class_ids).mean())
