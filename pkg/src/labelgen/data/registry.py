"""Task and dataset registry for the four-task, six-dataset layout."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from ..tokenizer import canonicalize

TRAIN_VAL_TEST = "train+val+test"
EXTERNAL_TEST = "external-test"
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class TaskSpec:
    name: str
    labels: tuple[str, ...]
    grading: bool
    benign_class: int | None = None

    def __post_init__(self):
        canon = tuple(canonicalize(l) for l in self.labels)
        object.__setattr__(self, "labels", canon)
        if len(set(canon)) != len(canon):
            raise ValueError(f"task {self.name}: duplicate labels")
        if self.grading and self.benign_class is None:
            raise ValueError(f"grading task {self.name} must declare its benign class")

    @property
    def num_classes(self) -> int:
        return len(self.labels)

    def class_index(self, label: str) -> int:
        return self.labels.index(canonicalize(label))


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    task: str
    role: str
    split_sizes: dict[str, int]
    patch_size: int
    magnification: str

    @property
    def splits(self) -> tuple[str, ...]:
        return tuple(s for s in SPLITS if self.split_sizes.get(s, 0) > 0)


@dataclass(frozen=True)
class Sample:
    image: np.ndarray
    label: str
    dataset: str
    task: str
    split: str
    index: int


@dataclass
class Corpus:
    """All samples of one (dataset, split), stored as stacked arrays."""

    dataset: str
    task: str
    split: str
    images: np.ndarray  # [N, 3, H, W] float32 in [0, 1]
    class_ids: np.ndarray  # [N] int64
    labels: tuple[str, ...]  # task label list; labels[class_ids[k]] is sample k's text
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.class_ids)

    def label_of(self, k: int) -> str:
        return self.labels[int(self.class_ids[k])]

    def samples(self) -> Iterator[Sample]:
        for k in range(len(self)):
            yield Sample(self.images[k], self.label_of(k), self.dataset, self.task, self.split, k)


COLORECTAL_GRADING = TaskSpec(
    "colorectal_grading",
    ("benign", "well differentiated cancer", "moderately differentiated cancer", "poorly differentiated cancer"),
    grading=True, benign_class=0,
)
PROSTATE_GRADING = TaskSpec(
    "prostate_grading",
    ("benign", "grade 3 cancer", "grade 4 cancer", "grade 5 cancer"),
    grading=True, benign_class=0,
)
GASTRIC_GRADING = TaskSpec(
    "gastric_grading",
    ("benign", "tubular well differentiated cancer", "tubular moderately differentiated cancer",
     "tubular poorly differentiated cancer"),
    grading=True, benign_class=0,
)
COLORECTAL_TISSUE = TaskSpec(
    "colorectal_tissue_typing",
    ("adipose", "background", "debris", "lymphocyte", "normal", "stroma", "epithelium", "muscle", "mucus"),
    grading=False,
)

DEFAULT_TASKS = (COLORECTAL_GRADING, PROSTATE_GRADING, GASTRIC_GRADING, COLORECTAL_TISSUE)

# patch counts of the original collections, kept as metadata
DEFAULT_DATASETS = (
    DatasetSpec("colon-1", COLORECTAL_GRADING.name, TRAIN_VAL_TEST,
                {"train": 7027, "val": 1242, "test": 1588}, 512, "20x"),
    DatasetSpec("colon-2", COLORECTAL_GRADING.name, EXTERNAL_TEST, {"test": 110170}, 512, "20x"),
    DatasetSpec("prostate-1", PROSTATE_GRADING.name, TRAIN_VAL_TEST,
                {"train": 15303, "val": 2482, "test": 4237}, 750, "40x"),
    DatasetSpec("prostate-2", PROSTATE_GRADING.name, EXTERNAL_TEST, {"test": 17066}, 690, "40x"),
    DatasetSpec("gastric", GASTRIC_GRADING.name, TRAIN_VAL_TEST,
                {"train": 233898, "val": 15381, "test": 15787}, 512, "40x"),
    DatasetSpec("k19", COLORECTAL_TISSUE.name, TRAIN_VAL_TEST,
                {"train": 70000, "val": 15000, "test": 15000}, 224, "20x"),
)


@dataclass(frozen=True)
class Registry:
    tasks: tuple[TaskSpec, ...]
    datasets: tuple[DatasetSpec, ...]

    def task(self, name: str) -> TaskSpec:
        for t in self.tasks:
            if t.name == name:
                return t
        raise KeyError(f"unknown task {name!r}")

    def dataset(self, name: str) -> DatasetSpec:
        for d in self.datasets:
            if d.name == name:
                return d
        raise KeyError(f"unknown dataset {name!r}")

    def task_index(self, name: str) -> int:
        return [t.name for t in self.tasks].index(name)

    def datasets_for(self, task: str) -> tuple[DatasetSpec, ...]:
        return tuple(d for d in self.datasets if d.task == task)

    def all_labels(self) -> list[str]:
        return [l for t in self.tasks for l in t.labels]

    def subset(self, task_names) -> "Registry":
        names = set(task_names)
        return Registry(tuple(t for t in self.tasks if t.name in names),
                        tuple(d for d in self.datasets if d.task in names))


def register_default_layout() -> Registry:
    return Registry(DEFAULT_TASKS, DEFAULT_DATASETS)
