"""Confusion-matrix metrics and per-dataset evaluation.

Conventions:

* Rows are ground truth, columns predictions; column ``K`` collects
  out-of-vocabulary (OOV) generations.  OOV samples count in totals and in
  recall denominators, never in any numerator or precision denominator.
* Per-class precision, recall or F1 with a zero denominator is 0.
* Cancer-grading accuracy is exact-class accuracy over samples whose ground
  truth is not the benign class.
* Quadratic weighted kappa runs on proportions in float64.  An OOV column
  gets the maximal disagreement weight 1 against every row.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data.registry import Corpus, TaskSpec
from .inference import Prediction, greedy_generate_batch
from .model.bundle import ModelBundle
from .model.network import classify_head, extract_features
from .numerics.tensor import no_grad


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # [K, K + 1] int64

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def square(self) -> np.ndarray:
        return self.counts[:, :self.num_classes]

    @property
    def oov(self) -> np.ndarray:
        return self.counts[:, self.num_classes]

    @classmethod
    def from_square(cls, cm) -> "ConfusionMatrix":
        cm = np.asarray(cm, dtype=np.int64)
        return cls(np.concatenate([cm, np.zeros((cm.shape[0], 1), dtype=np.int64)], axis=1))

    @classmethod
    def from_labels(cls, truth: Sequence[int], predicted: Sequence[int | None], num_classes: int) -> "ConfusionMatrix":
        counts = np.zeros((num_classes, num_classes + 1), dtype=np.int64)
        for t, p in zip(truth, predicted):
            counts[int(t), num_classes if p is None else int(p)] += 1
        return cls(counts)


def _as_cm(cm) -> ConfusionMatrix:
    return cm if isinstance(cm, ConfusionMatrix) else ConfusionMatrix.from_square(cm)


def accuracy(cm) -> float:
    cm = _as_cm(cm)
    return float(np.trace(cm.square)) / cm.total if cm.total else 0.0


def accuracy_grading(cm, benign_class: int) -> float | None:
    """Accuracy over non-benign ground-truth rows; None when there are none."""
    cm = _as_cm(cm)
    rows = [i for i in range(cm.num_classes) if i != benign_class]
    support = int(cm.counts[rows].sum())
    if support == 0:
        return None
    return float(sum(cm.counts[i, i] for i in rows)) / support


def per_class_scores(cm) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    cm = _as_cm(cm)
    tp = np.diag(cm.square).astype(np.float64)
    predicted = cm.square.sum(axis=0).astype(np.float64)
    actual = cm.counts.sum(axis=1).astype(np.float64)
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    recall = np.divide(tp, actual, out=np.zeros_like(tp), where=actual > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    return precision, recall, f1


def _macro(values: np.ndarray) -> float:
    # fsum keeps the mean independent of summation order
    return math.fsum(values.tolist()) / len(values)


def macro_precision(cm) -> float:
    return _macro(per_class_scores(cm)[0])


def macro_recall(cm) -> float:
    return _macro(per_class_scores(cm)[1])


def macro_f1(cm) -> float:
    return _macro(per_class_scores(cm)[2])


def quadratic_weighted_kappa(cm) -> float | None:
    """1 - sum(w O) / sum(w E) with w_ij = (i - j)^2 / (K - 1)^2."""
    cm = _as_cm(cm)
    K = cm.num_classes
    counts = cm.counts.astype(np.float64)
    if cm.total == 0 or K < 2:
        return None
    O = counts / counts.sum()
    E = np.outer(O.sum(axis=1), O.sum(axis=0))
    idx = np.arange(K)
    w = np.ones((K, K + 1))
    w[:, :K] = (idx[:, None] - idx[None, :]) ** 2 / (K - 1) ** 2
    denom = float((w * E).sum())
    if denom == 0.0:
        return None
    return 1.0 - float((w * O).sum()) / denom


def valid_label_rate(predictions: Sequence[Prediction], source_tasks: Sequence[str] | None = None) -> float:
    """Fraction of predictions that name a label of their sample's own task."""
    if not predictions:
        return 0.0
    if source_tasks is None:
        ok = [p.class_id is not None for p in predictions]
    else:
        ok = [p.class_id is not None and p.task == t for p, t in zip(predictions, source_tasks)]
    return float(np.mean(ok))


RESULTS_COLUMNS = ("dataset", "task", "setting", "n", "Acc(%)", "Acc_g(%)", "F1", "K_w", "Pre", "Re",
                   "valid_rate")
GRADING_COLUMNS = ("Acc(%)", "Acc_g(%)", "F1", "K_w")
TYPING_COLUMNS = ("Acc(%)", "Pre", "Re", "F1")


@dataclass
class MetricsReport:
    dataset: str
    task: str
    setting: str
    n: int
    grading: bool
    acc: float
    f1: float
    precision: float
    recall: float
    acc_g: float | None = None
    kappa: float | None = None
    valid_rate: float = 1.0
    oov_count: int = 0

    def table_columns(self) -> tuple[str, ...]:
        return GRADING_COLUMNS if self.grading else TYPING_COLUMNS

    def values(self) -> dict[str, float | None]:
        return {
            "Acc(%)": 100.0 * self.acc,
            "Acc_g(%)": None if self.acc_g is None else 100.0 * self.acc_g,
            "F1": self.f1,
            "K_w": self.kappa,
            "Pre": self.precision,
            "Re": self.recall,
            "valid_rate": self.valid_rate,
        }

    def row(self) -> list[str]:
        """One results-table row; columns outside this task type print as '-'."""
        vals = self.values()
        shown = set(self.table_columns()) | {"valid_rate"}
        out = [self.dataset, self.task, self.setting, str(self.n)]
        for col in RESULTS_COLUMNS[4:]:
            v = vals[col]
            out.append("-" if v is None or col not in shown else f"{v:.4f}")
        return out

    def to_kv(self) -> str:
        return "".join(f"{k}\t{'-' if v is None else v}\n" for k, v in asdict(self).items())


def results_table(reports: Sequence[MetricsReport]) -> str:
    lines = ["\t".join(RESULTS_COLUMNS)]
    lines += ["\t".join(r.row()) for r in reports]
    return "\n".join(lines) + "\n"


def build_report(cm: ConfusionMatrix, task: TaskSpec, dataset: str, setting: str,
                 valid_rate: float = 1.0) -> MetricsReport:
    p, r, f = per_class_scores(cm)
    return MetricsReport(
        dataset=dataset, task=task.name, setting=setting, n=cm.total, grading=task.grading,
        acc=accuracy(cm), f1=_macro(f), precision=_macro(p), recall=_macro(r),
        acc_g=accuracy_grading(cm, task.benign_class) if task.grading else None,
        kappa=quadratic_weighted_kappa(cm) if task.grading else None,
        valid_rate=valid_rate, oov_count=int(cm.oov.sum()),
    )


Predictor = Callable[[np.ndarray, str], list[Prediction]]


def bundle_predictor(bundle: ModelBundle, batch_size: int = 128) -> Predictor:
    """Predictions from greedy generation (E_TAG) or the task head's argmax."""

    def predict(images: np.ndarray, task: str) -> list[Prediction]:
        if bundle.generative:
            return greedy_generate_batch(bundle, images, [task] * len(images), batch_size=batch_size)
        labels = bundle.task(task).labels
        preds = []
        with no_grad():
            for start in range(0, len(images), batch_size):
                logits = classify_head(bundle, extract_features(bundle, images[start:start + batch_size]), task).data
                for c in np.argmax(logits, axis=-1):
                    preds.append(Prediction(labels[int(c)], [], [], int(c), task))
        return preds

    return predict


@dataclass
class Evaluation:
    report: MetricsReport
    cm: ConfusionMatrix
    predictions: list[Prediction] = field(default_factory=list)


def evaluate(bundle: ModelBundle | None, corpus: Corpus, task: TaskSpec, setting: str | None = None,
             predictor: Predictor | None = None) -> Evaluation:
    """Score one (dataset, split).  A generation naming another task's label is OOV here."""
    if predictor is None:
        predictor = bundle_predictor(bundle)
    setting = setting or (bundle.setting if bundle is not None else "")
    preds = predictor(corpus.images, task.name)
    predicted = [p.class_id if (p.class_id is not None and p.task == task.name) else None for p in preds]
    cm = ConfusionMatrix.from_labels(corpus.class_ids, predicted, task.num_classes)
    rate = valid_label_rate(preds, [task.name] * len(preds))
    for k, p in enumerate(preds):
        p.meta.update({"dataset": corpus.dataset, "split": corpus.split, "index": k,
                       "truth": corpus.label_of(k)})
    return Evaluation(build_report(cm, task, corpus.dataset, setting, rate), cm, preds)
