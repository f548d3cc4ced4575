"""Run configuration: one JSON file, validated before any work.

Schema (every key optional, unknown keys rejected)::

    {
      "setting": "E_TAG",                 # E_TS | E_TA | E_TAG
      "seed": 0,
      "out_dir": "runs/default",
      "data": {"source": "synthetic",     # synthetic | folder
               "path": null,              # folder root when source == folder
               "image_size": 64,
               "per_class": {"train": 200, "val": 50, "test": 50},
               "datasets": null},         # null = every registered dataset
      "model": {"depths": [2, 2], "widths": [32, 64], "kernel_size": 7, "stem_stride": 4,
                "layers": 2, "heads": 4, "d_model": 128, "ff_mult": 4,
                "n_prefix": 1, "projector_hidden": 0},
      "train": {"epochs": 30, "lr": 3e-4, "weight_decay": 0.01, "batch_size": 32,
                "t0": 10, "t_mult": 2, "eta_min": 0.0, "eval_every": 1,
                "augment": true, "clip_norm": null},
      "profile": {"batch_size": 8, "iters": 20, "warmup": 3}
    }

Vocabulary size and position count are derived from the label universe,
never configured.  In E_TS, ``data.datasets`` names exactly one dataset with
a training split, plus any external test sets of the same task.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .data.batches import E_TAG, E_TS, SETTINGS
from .data.registry import EXTERNAL_TEST, Registry, register_default_layout
from .model.bundle import ConfigError, DecoderConfig, ExtractorConfig
from .training.loop import TrainConfig


@dataclass
class DataConfig:
    source: str = "synthetic"
    path: str | None = None
    image_size: int = 64
    per_class: dict[str, int] = field(default_factory=lambda: {"train": 200, "val": 50, "test": 50})
    datasets: list[str] | None = None


@dataclass
class ModelConfig:
    depths: list[int] = field(default_factory=lambda: [2, 2])
    widths: list[int] = field(default_factory=lambda: [32, 64])
    kernel_size: int = 7
    stem_stride: int = 4
    layers: int = 2
    heads: int = 4
    d_model: int = 128
    ff_mult: int = 4
    n_prefix: int = 1
    projector_hidden: int = 0


@dataclass
class TrainSection:
    epochs: int = 30
    lr: float = 3e-4
    weight_decay: float = 0.01
    batch_size: int = 32
    t0: float = 10
    t_mult: float = 2
    eta_min: float = 0.0
    eval_every: int = 1
    augment: bool = True
    clip_norm: float | None = None


@dataclass
class ProfileConfig:
    batch_size: int = 8
    iters: int = 20
    warmup: int = 3


@dataclass
class RunConfig:
    setting: str = E_TAG
    seed: int = 0
    out_dir: str = "runs/default"
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainSection = field(default_factory=TrainSection)
    profile: ProfileConfig = field(default_factory=ProfileConfig)

    def registry(self) -> Registry:
        """Registered layout restricted to ``data.datasets`` and their tasks."""
        reg = register_default_layout()
        if self.data.datasets is None:
            return reg
        specs = tuple(reg.dataset(n) for n in self.data.datasets)
        tasks = tuple(t for t in reg.tasks if any(d.task == t.name for d in specs))
        return Registry(tasks, specs)

    def extractor_config(self) -> ExtractorConfig:
        m = self.model
        return ExtractorConfig(tuple(m.depths), tuple(m.widths), m.kernel_size, m.stem_stride)

    def decoder_config(self, vocab_size: int, seq_len: int) -> DecoderConfig:
        m = self.model
        return DecoderConfig(m.layers, m.heads, m.d_model, vocab_size, seq_len + m.n_prefix - 1, m.ff_mult)

    def train_config(self) -> TrainConfig:
        return TrainConfig(setting=self.setting, seed=self.seed, image_size=self.data.image_size,
                           **asdict(self.train))

    def validate(self) -> None:
        if self.setting not in SETTINGS:
            raise ConfigError(f"setting must be one of {SETTINGS}, got {self.setting!r}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        if self.data.source not in ("synthetic", "folder"):
            raise ConfigError(f"data.source must be 'synthetic' or 'folder', got {self.data.source!r}")
        if self.data.image_size < 16:
            raise ConfigError("data.image_size must be >= 16")
        if set(self.data.per_class) - {"train", "val", "test"} or any(v < 0 for v in self.data.per_class.values()):
            raise ConfigError("data.per_class keys are train/val/test with non-negative counts")
        try:
            reg = self.registry()
        except KeyError as e:
            raise ConfigError(f"data.datasets: {e.args[0]}") from None
        if self.setting == E_TS:
            trainable = [d for d in reg.datasets if d.role != EXTERNAL_TEST]
            if self.data.datasets is None or len(trainable) != 1 or len(reg.tasks) != 1:
                raise ConfigError("E_TS needs data.datasets to name exactly one dataset with a training split, "
                                  "optionally with external test sets of the same task")
        self.extractor_config().validate()
        if self.setting == E_TAG:
            self.decoder_config(4, 2).validate()
            if self.model.n_prefix < 1:
                raise ConfigError("model.n_prefix must be >= 1")
        try:
            self.train_config().validate()
        except ValueError as e:
            raise ConfigError(f"train: {e}") from None
        p = self.profile
        if p.iters < 20 or p.warmup < 3 or p.batch_size < 1:
            raise ConfigError("profile needs iters >= 20, warmup >= 3 and batch_size >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


_SECTIONS = {"data": DataConfig, "model": ModelConfig, "train": TrainSection, "profile": ProfileConfig}


def _build(cls, raw, where: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where or 'config'} must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or 'config'}: {', '.join(unknown)}")
    kwargs = {}
    for k, v in raw.items():
        kwargs[k] = _build(_SECTIONS[k], v, k) if cls is RunConfig and k in _SECTIONS else v
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError(str(e)) from None


def config_from_dict(raw: dict) -> RunConfig:
    cfg = _build(RunConfig, raw, "")
    try:
        cfg.validate()
    except (TypeError, AttributeError) as e:
        raise ConfigError(f"badly typed config value: {e}") from None
    return cfg


def load_config(path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path}: {e}") from None
    return config_from_dict(raw)
