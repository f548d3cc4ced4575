"""Model configuration, parameter containers and initialisation."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..data.batches import E_TA, E_TAG, E_TS, SETTINGS
from ..data.registry import TaskSpec
from ..numerics.rng import Rng
from ..numerics.tensor import Tensor
from ..tokenizer import Vocabulary


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExtractorConfig:
    depths: tuple[int, ...] = (2, 2)
    widths: tuple[int, ...] = (32, 64)
    kernel_size: int = 7
    stem_stride: int = 4
    in_channels: int = 3

    def validate(self) -> None:
        if len(self.depths) != len(self.widths) or not self.depths:
            raise ConfigError("extractor depths and widths must be non-empty and the same length")
        if any(d < 1 for d in self.depths) or any(w < 1 for w in self.widths):
            raise ConfigError("extractor depths and widths must be positive")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError("kernel_size must be a positive odd integer")
        if self.stem_stride < 1 or self.in_channels < 1:
            raise ConfigError("stem_stride and in_channels must be positive")

    @property
    def feature_dim(self) -> int:
        return self.widths[-1]


@dataclass(frozen=True)
class DecoderConfig:
    layers: int = 2
    heads: int = 4
    d_model: int = 128
    vocab_size: int = 23
    max_positions: int = 7
    ff_mult: int = 4

    def validate(self) -> None:
        if self.layers < 1 or self.heads < 1 or self.d_model < 1:
            raise ConfigError("decoder layers, heads and d_model must be positive")
        if self.d_model % self.heads:
            raise ConfigError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if self.vocab_size < 4 or self.max_positions < 2:
            raise ConfigError("vocabulary or position table too small")

    @property
    def d_ff(self) -> int:
        return self.ff_mult * self.d_model


@dataclass
class ModelBundle:
    setting: str
    extractor: ExtractorConfig
    tasks: tuple[TaskSpec, ...]
    params: dict[str, Tensor] = field(default_factory=dict)
    decoder: DecoderConfig | None = None
    vocab: Vocabulary | None = None
    seq_len: int = 0  # T
    n_prefix: int = 1
    projector_hidden: int = 0

    @property
    def generative(self) -> bool:
        return self.setting == E_TAG

    @property
    def head_names(self) -> list[str]:
        return [t.name for t in self.tasks] if not self.generative else []

    def task(self, name: str) -> TaskSpec:
        for t in self.tasks:
            if t.name == name:
                return t
        raise KeyError(f"task {name!r} not registered in this bundle")

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for k, v in arrays.items():
            self.params[k].data[...] = v

    def copy(self) -> "ModelBundle":
        params = {k: Tensor(v.data.copy(), requires_grad=v.requires_grad, name=k) for k, v in self.params.items()}
        return ModelBundle(self.setting, self.extractor, self.tasks, params, self.decoder, self.vocab,
                           self.seq_len, self.n_prefix, self.projector_hidden)

    def config_dict(self) -> dict:
        return {
            "setting": self.setting,
            "extractor": asdict(self.extractor),
            "decoder": asdict(self.decoder) if self.decoder else None,
            "tasks": [{"name": t.name, "labels": list(t.labels), "grading": t.grading,
                       "benign_class": t.benign_class} for t in self.tasks],
            "vocab": self.vocab.to_dict() if self.vocab else None,
            "seq_len": self.seq_len,
            "n_prefix": self.n_prefix,
            "projector_hidden": self.projector_hidden,
        }

    @classmethod
    def from_config_dict(cls, d: dict) -> "ModelBundle":
        ext = d["extractor"]
        dec = d.get("decoder")
        return cls(
            setting=d["setting"],
            extractor=ExtractorConfig(tuple(ext["depths"]), tuple(ext["widths"]), ext["kernel_size"],
                                      ext["stem_stride"], ext["in_channels"]),
            tasks=tuple(TaskSpec(t["name"], tuple(t["labels"]), t["grading"], t["benign_class"]) for t in d["tasks"]),
            decoder=DecoderConfig(**dec) if dec else None,
            vocab=Vocabulary.from_dict(d["vocab"]) if d.get("vocab") else None,
            seq_len=d["seq_len"],
            n_prefix=d["n_prefix"],
            projector_hidden=d["projector_hidden"],
        )


def parameter_shapes(extractor: ExtractorConfig, tasks, setting: str, decoder: DecoderConfig | None = None,
                     n_prefix: int = 1, projector_hidden: int = 0) -> dict[str, tuple[int, ...]]:
    """Ordered name -> shape map of every tensor in a bundle."""
    shapes: dict[str, tuple[int, ...]] = {}
    s = extractor.stem_stride
    w0 = extractor.widths[0]
    shapes["extractor.stem.weight"] = (w0, extractor.in_channels, s, s)
    shapes["extractor.stem.bias"] = (w0,)
    shapes["extractor.stem_norm.gain"] = (w0,)
    shapes["extractor.stem_norm.shift"] = (w0,)
    k = extractor.kernel_size
    for si, (depth, width) in enumerate(zip(extractor.depths, extractor.widths)):
        pre = f"extractor.stages.{si}"
        if si > 0:
            prev = extractor.widths[si - 1]
            shapes[f"{pre}.down.norm.gain"] = (prev,)
            shapes[f"{pre}.down.norm.shift"] = (prev,)
            shapes[f"{pre}.down.conv.weight"] = (width, prev, 2, 2)
            shapes[f"{pre}.down.conv.bias"] = (width,)
        for b in range(depth):
            bp = f"{pre}.blocks.{b}"
            shapes[f"{bp}.dw.weight"] = (width, 1, k, k)
            shapes[f"{bp}.dw.bias"] = (width,)
            shapes[f"{bp}.norm.gain"] = (width,)
            shapes[f"{bp}.norm.shift"] = (width,)
            shapes[f"{bp}.fc1.weight"] = (4 * width, width)
            shapes[f"{bp}.fc1.bias"] = (4 * width,)
            shapes[f"{bp}.fc2.weight"] = (width, 4 * width)
            shapes[f"{bp}.fc2.bias"] = (width,)
    d_feat = extractor.feature_dim
    shapes["extractor.head_norm.gain"] = (d_feat,)
    shapes["extractor.head_norm.shift"] = (d_feat,)

    if setting == E_TAG:
        assert decoder is not None
        d = decoder.d_model
        hid = projector_hidden or d
        shapes["projector.fc1.weight"] = (hid, d_feat)
        shapes["projector.fc1.bias"] = (hid,)
        shapes["projector.fc2.weight"] = (hid, hid)
        shapes["projector.fc2.bias"] = (hid,)
        shapes["projector.fc3.weight"] = (n_prefix * d, hid)
        shapes["projector.fc3.bias"] = (n_prefix * d,)
        shapes["decoder.tok_emb"] = (decoder.vocab_size, d)
        shapes["decoder.pos_emb"] = (decoder.max_positions, d)
        for l in range(decoder.layers):
            lp = f"decoder.blocks.{l}"
            shapes[f"{lp}.ln1.gain"] = (d,)
            shapes[f"{lp}.ln1.shift"] = (d,)
            shapes[f"{lp}.attn.qkv.weight"] = (3 * d, d)
            shapes[f"{lp}.attn.qkv.bias"] = (3 * d,)
            shapes[f"{lp}.attn.out.weight"] = (d, d)
            shapes[f"{lp}.attn.out.bias"] = (d,)
            shapes[f"{lp}.ln2.gain"] = (d,)
            shapes[f"{lp}.ln2.shift"] = (d,)
            shapes[f"{lp}.mlp.fc1.weight"] = (decoder.d_ff, d)
            shapes[f"{lp}.mlp.fc1.bias"] = (decoder.d_ff,)
            shapes[f"{lp}.mlp.fc2.weight"] = (d, decoder.d_ff)
            shapes[f"{lp}.mlp.fc2.bias"] = (d,)
        shapes["decoder.final_norm.gain"] = (d,)
        shapes["decoder.final_norm.shift"] = (d,)
        shapes["decoder.lm_head.weight"] = (decoder.vocab_size, d)
    else:
        for t in tasks:
            shapes[f"heads.{t.name}.weight"] = (t.num_classes, d_feat)
            shapes[f"heads.{t.name}.bias"] = (t.num_classes,)
    return shapes


def _init_value(name: str, shape, rng: Rng, dtype) -> np.ndarray:
    if name.endswith(".gain"):
        return np.ones(shape, dtype=dtype)
    if name.endswith(".bias") or name.endswith(".shift"):
        return np.zeros(shape, dtype=dtype)
    return rng.child(name).truncated_normal(shape, 0.02).astype(dtype)


def init_weights(extractor: ExtractorConfig, decoder: DecoderConfig | None, tasks, setting: str, seed: int,
                 vocab: Vocabulary | None = None, seq_len: int = 0, n_prefix: int = 1,
                 projector_hidden: int = 0, dtype=np.float32) -> ModelBundle:
    """Fresh bundle: truncated normal (std 0.02) weights, zero biases, unit gains.

    Every tensor draws from its own child stream keyed by name, so adding a
    task head does not perturb the other tensors.
    """
    if setting not in SETTINGS:
        raise ConfigError(f"unknown setting {setting!r}")
    extractor.validate()
    tasks = tuple(tasks)
    if not tasks:
        raise ConfigError("at least one task is required")
    if setting == E_TS and len(tasks) != 1:
        raise ConfigError("an E_TS bundle serves exactly one task")
    if setting == E_TAG:
        if decoder is None or vocab is None or seq_len < 2:
            raise ConfigError("E_TAG bundles need a decoder config, a vocabulary and seq_len >= 2")
        decoder.validate()
        if decoder.vocab_size != len(vocab):
            raise ConfigError(f"decoder vocab_size {decoder.vocab_size} != vocabulary size {len(vocab)}")
        if decoder.max_positions < seq_len + n_prefix - 1:
            raise ConfigError("max_positions too small for prefix + sequence")
        if n_prefix < 1:
            raise ConfigError("n_prefix must be >= 1")
    else:
        decoder = None
    rng = Rng(seed)
    shapes = parameter_shapes(extractor, tasks, setting, decoder, n_prefix, projector_hidden)
    params = {name: Tensor(_init_value(name, shape, rng, dtype), requires_grad=True, name=name)
              for name, shape in shapes.items()}
    hidden = (projector_hidden or decoder.d_model) if decoder else 0
    return ModelBundle(setting, extractor, tasks, params, decoder, vocab if setting == E_TAG else None,
                       seq_len if setting == E_TAG else 0, n_prefix, hidden)


__all__ = ["ConfigError", "ExtractorConfig", "DecoderConfig", "ModelBundle", "init_weights", "parameter_shapes",
           "E_TS", "E_TA", "E_TAG"]
