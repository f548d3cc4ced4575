"""Training loop for the three experiment settings."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..data.augment import AugmentConfig, augment, resize
from ..data.batches import E_TAG, SETTINGS, Pool, make_batches
from ..data.registry import Corpus
from ..metrics import evaluate
from ..model.bundle import ModelBundle
from ..numerics.optim import AdamW
from ..numerics.rng import Rng, derive_seed
from ..numerics.tensor import Tape, backward
from ..tokenizer import encode_batch
from .losses import loss_generative, loss_heads
from .schedule import scheduler_lr

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    setting: str = E_TAG
    epochs: int = 60
    lr: float = 3e-4
    weight_decay: float = 0.01
    batch_size: int = 32
    t0: float = 10
    t_mult: float = 2
    eta_min: float = 0.0
    seed: int = 0
    eval_every: int = 1
    image_size: int = 64
    augment: bool = True
    clip_norm: float | None = None
    # epoch -> task names left out of that epoch's stream
    withheld: dict[int, list[str]] = field(default_factory=dict)

    def validate(self) -> None:
        if self.setting not in SETTINGS:
            raise ValueError(f"unknown setting {self.setting!r}")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1 or self.eval_every < 1:
            raise ValueError("batch_size and eval_every must be >= 1")
        if self.t0 <= 0 or self.t_mult < 1:
            raise ValueError("scheduler needs t0 > 0 and t_mult >= 1")


@dataclass
class TrainTrace:
    step_epoch: list[float] = field(default_factory=list)
    step_lr: list[float] = field(default_factory=list)
    epoch_loss: list[float] = field(default_factory=list)
    val_acc: list[dict[str, float]] = field(default_factory=list)
    head_grad_norm: list[dict[str, float]] = field(default_factory=list)
    tasks_seen: list[list[str]] = field(default_factory=list)
    best_epoch: int | None = None
    best_score: float | None = None

    def to_tsv(self) -> str:
        datasets = sorted({k for row in self.val_acc for k in row})
        heads = sorted({k for row in self.head_grad_norm for k in row})
        header = ["epoch", "lr", "loss"] + [f"val_acc:{d}" for d in datasets] + [f"head_grad:{h}" for h in heads]
        lines = ["\t".join(header)]
        steps = np.asarray(self.step_epoch)
        for e, loss in enumerate(self.epoch_loss):
            first = int(np.searchsorted(steps, e))
            lr = self.step_lr[first] if first < len(self.step_lr) else float("nan")
            val = self.val_acc[e] if e < len(self.val_acc) else {}
            hg = self.head_grad_norm[e] if e < len(self.head_grad_norm) else {}
            row = [str(e), repr(lr), repr(loss)]
            row += ["-" if d not in val else repr(val[d]) for d in datasets]
            row += ["-" if h not in hg else repr(hg[h]) for h in heads]
            lines.append("\t".join(row))
        return "\n".join(lines) + "\n"


def _prepare_images(batch_images: np.ndarray, indices: np.ndarray, epoch: int, cfg: TrainConfig,
                    aug_cfg: AugmentConfig) -> np.ndarray:
    out = []
    for img, idx in zip(batch_images, indices):
        if cfg.augment:
            img = augment(img, Rng(derive_seed(cfg.seed, "augment", epoch, int(idx))), aug_cfg)
        out.append(resize(img, cfg.image_size))
    return np.stack(out).astype(np.float32)


def validation_scores(bundle: ModelBundle, val: Sequence[Corpus]) -> dict[str, float]:
    scores = {}
    for corpus in val:
        scores[corpus.dataset] = evaluate(bundle, corpus, bundle.task(corpus.task)).report.acc
    return scores


def train(bundle: ModelBundle, train_data: Sequence[Corpus], cfg: TrainConfig,
          val_data: Sequence[Corpus] = (), aug_cfg: AugmentConfig = AugmentConfig()) -> tuple[ModelBundle, TrainTrace]:
    """Optimise ``bundle`` in place; return a copy holding the best weights.

    The best epoch is the one with the highest mean validation accuracy over
    ``val_data`` (the final epoch when no validation data is given).
    """
    cfg.validate()
    if bundle.setting != cfg.setting:
        raise ValueError(f"bundle setting {bundle.setting} != config setting {cfg.setting}")
    for c in list(train_data) + list(val_data):
        if c.split == "test":
            raise ValueError(f"test split of {c.dataset} passed to training")
    trace = TrainTrace()
    if cfg.epochs == 0:
        return bundle.copy(), trace

    pool = Pool.from_corpora(train_data)
    tokens = encode_batch(pool.labels, bundle.vocab, bundle.seq_len) if bundle.generative else None
    opt = AdamW(bundle.params, weight_decay=cfg.weight_decay, clip_norm=cfg.clip_norm)
    opt.zero_grad()
    best_arrays = None

    for epoch in range(cfg.epochs):
        withheld = cfg.withheld.get(epoch, [])
        batches = list(make_batches(pool, cfg.batch_size, cfg.setting, cfg.seed, epoch, exclude_tasks=withheld))
        grad_norm = {h: 0.0 for h in bundle.head_names}
        seen: set[str] = set()
        losses = []
        for i, batch in enumerate(batches):
            t = epoch + i / len(batches)
            lr = scheduler_lr(t, cfg.lr, cfg.t0, cfg.t_mult, cfg.eta_min)
            images = _prepare_images(batch.images, batch.indices, epoch, cfg, aug_cfg)
            with Tape() as tape:
                if bundle.generative:
                    loss = loss_generative(bundle, images, tokens[batch.indices])
                else:
                    loss = loss_heads(bundle, images, batch.task_names, batch.class_ids)
            value = float(loss.data)
            if not math.isfinite(value):
                raise DivergenceError(f"loss became {value} at epoch {epoch}, step {i}")
            backward(loss, tape)
            for h in grad_norm:
                w, b = bundle.params[f"heads.{h}.weight"].grad, bundle.params[f"heads.{h}.bias"].grad
                grad_norm[h] += float(np.sqrt(np.sum(w.astype(np.float64) ** 2) + np.sum(b.astype(np.float64) ** 2)))
            opt.step(lr)
            opt.zero_grad()
            seen.update(batch.task_names)
            losses.append(value)
            trace.step_epoch.append(t)
            trace.step_lr.append(lr)
        trace.epoch_loss.append(float(np.mean(losses)) if losses else float("nan"))
        trace.head_grad_norm.append(grad_norm)
        trace.tasks_seen.append(sorted(seen))

        last = epoch == cfg.epochs - 1
        if val_data and ((epoch + 1) % cfg.eval_every == 0 or last):
            scores = validation_scores(bundle, val_data)
            trace.val_acc.append(scores)
            score = float(np.mean(list(scores.values())))
        else:
            trace.val_acc.append({})
            score = None if val_data else float(epoch)
        if score is not None and (trace.best_score is None or score > trace.best_score):
            trace.best_score, trace.best_epoch = score, epoch
            best_arrays = bundle.state_arrays()
        log.info("epoch %d loss %.4f val %s", epoch, trace.epoch_loss[-1], trace.val_acc[-1])

    best = bundle.copy()
    if best_arrays is not None:
        best.load_arrays(best_arrays)
    return best, trace
