"""Greedy label generation and mapping generated text back to classes."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .data.registry import TaskSpec
from .model.bundle import ModelBundle
from .model.network import decode_step, extract_features, project
from .numerics.tensor import Tensor, no_grad
from .tokenizer import EOS, PAD, canonicalize, decode


@dataclass(frozen=True)
class LabelMatch:
    task: str
    class_id: int


@dataclass
class Prediction:
    text: str
    token_ids: list[int]
    step_probs: list[float]
    class_id: int | None = None
    task: str | None = None
    meta: dict = field(default_factory=dict)

    @property
    def oov(self) -> bool:
        return self.class_id is None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "Prediction":
        return cls(**json.loads(line))


def match_label(text: str, tasks: Sequence[TaskSpec], source_task: str | None = None) -> LabelMatch | None:
    """Exact match of canonical ``text`` against registered labels.

    A label shared by several tasks (``benign``) resolves to ``source_task``
    when that task owns it, otherwise to the first registering task.
    """
    canon = canonicalize(text)
    if source_task is not None:
        for t in tasks:
            if t.name == source_task and canon in t.labels:
                return LabelMatch(t.name, t.labels.index(canon))
    for t in tasks:
        if canon in t.labels:
            return LabelMatch(t.name, t.labels.index(canon))
    return None


def argmax_lowest(logits: np.ndarray) -> np.ndarray:
    """Argmax over the last axis; ties go to the lowest id."""
    return np.argmax(logits, axis=-1)


def _softmax_max(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z.astype(np.float64))
    return e.max(axis=-1) / e.sum(axis=-1)


StepFn = Callable[[ModelBundle, Tensor, np.ndarray], Tensor]


def generate_from_prefix(bundle: ModelBundle, prefix: Tensor, max_steps: int,
                         step_fn: StepFn = decode_step) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Greedy decoding for a batch of prefixes.

    ``step_fn(bundle, prefix [n, P, d], ids [n, s])`` returns next-token logits
    [n, V]; tests substitute stub decoders here.  Returns (ids [N, max_steps]
    padded with PAD after EOS, step probabilities, emitted steps per row).
    """
    n = prefix.shape[0]
    ids = np.full((n, max_steps), PAD, dtype=np.int64)
    probs = np.zeros((n, max_steps))
    steps = np.zeros(n, dtype=np.int64)
    done = np.zeros(n, dtype=bool)
    for s in range(max_steps):
        active = np.flatnonzero(~done)
        if active.size == 0:
            break
        sub_prefix = Tensor(prefix.data[active])
        logits = step_fn(bundle, sub_prefix, ids[active, :s]).data
        nxt = argmax_lowest(logits)
        ids[active, s] = nxt
        probs[active, s] = _softmax_max(logits)
        steps[active] += 1
        done[active[nxt == EOS]] = True
    return ids, probs, steps


def greedy_generate_batch(bundle: ModelBundle, images, source_tasks: Iterable[str | None] | None = None,
                          max_steps: int | None = None, batch_size: int = 128,
                          step_fn: StepFn = decode_step) -> list[Prediction]:
    if not bundle.generative:
        raise ValueError("greedy generation needs a generative (E_TAG) bundle")
    images = np.asarray(images.data if isinstance(images, Tensor) else images, dtype=np.float32)
    max_steps = bundle.seq_len - 1 if max_steps is None else max_steps
    sources = list(source_tasks) if source_tasks is not None else [None] * len(images)
    preds: list[Prediction] = []
    with no_grad():
        for start in range(0, len(images), batch_size):
            chunk = images[start:start + batch_size]
            prefix = project(bundle, extract_features(bundle, chunk))
            ids, probs, steps = generate_from_prefix(bundle, prefix, max_steps, step_fn)
            for r in range(len(chunk)):
                k = int(steps[r])
                toks = [int(t) for t in ids[r, :k]]
                text = decode(toks, bundle.vocab)
                m = match_label(text, bundle.tasks, sources[start + r])
                preds.append(Prediction(text, toks, [float(p) for p in probs[r, :k]],
                                        m.class_id if m else None, m.task if m else None))
    return preds


def greedy_generate(bundle: ModelBundle, image, max_steps: int | None = None,
                    source_task: str | None = None, step_fn: StepFn = decode_step) -> Prediction:
    """Greedy decoding for one [3, H, W] image; stops at EOS or ``max_steps``."""
    image = np.asarray(image.data if isinstance(image, Tensor) else image, dtype=np.float32)
    return greedy_generate_batch(bundle, image[None], [source_task], max_steps, step_fn=step_fn)[0]


def write_predictions(path, predictions: Iterable[Prediction]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in predictions:
            fh.write(p.to_json() + "\n")


def read_predictions(path) -> list[Prediction]:
    with open(path, encoding="utf-8") as fh:
        return [Prediction.from_json(line) for line in fh if line.strip()]
