"""Analytic FLOP and parameter accounting plus wall-clock timing.

FLOP convention (one multiply-accumulate = 2 FLOPs):

* conv:       2 * C_in * C_out * kh * kw * H' * W'  +  H' * W' * C_out (bias)
* depthwise:  2 * C * kh * kw * H' * W'  +  H' * W' * C
* linear:     (2 * d_in * d_out + d_out) per token, d_out bias adds only when a bias exists
* attention:  2 * S * S * d for Q K^T and again for A V (full square, mask ignored)
* norms, activations, softmax, pooling, residual adds, embedding lookups: 0

Decoder costs are for one teacher-forced pass over ``n_prefix + T - 1``
positions.  Head-based bundles count the largest head, since each image is
routed to exactly one.
"""
from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from ..data.batches import E_TAG
from ..numerics import ops
from ..numerics.tensor import Tape, backward, no_grad
from ..tokenizer import BOS, EOS, PAD
from .bundle import DecoderConfig, ExtractorConfig, ModelBundle
from .network import classify_head, extract_features, forward_teacher_forced

CONVENTION = ("MAC=2 FLOPs; conv/linear count bias adds; attention counts QK^T and AV; "
              "norm/activation/softmax/pool/residual excluded")


@dataclass(frozen=True)
class Layer:
    name: str
    kind: str  # conv | depthwise | linear | attention | embedding | norm
    params: int
    flops: int


def conv_layer(name: str, c_in: int, c_out: int, k: int, h_out: int, w_out: int, bias: bool = True) -> Layer:
    params = c_in * c_out * k * k + (c_out if bias else 0)
    flops = 2 * c_in * c_out * k * k * h_out * w_out + (h_out * w_out * c_out if bias else 0)
    return Layer(name, "conv", params, flops)


def depthwise_layer(name: str, c: int, k: int, h_out: int, w_out: int, bias: bool = True) -> Layer:
    params = c * k * k + (c if bias else 0)
    flops = 2 * c * k * k * h_out * w_out + (h_out * w_out * c if bias else 0)
    return Layer(name, "depthwise", params, flops)


def linear_layer(name: str, d_in: int, d_out: int, tokens: int = 1, bias: bool = True) -> Layer:
    params = d_in * d_out + (d_out if bias else 0)
    flops = tokens * (2 * d_in * d_out + (d_out if bias else 0))
    return Layer(name, "linear", params, flops)


def attention_layer(name: str, seq: int, d: int) -> Layer:
    return Layer(name, "attention", 0, 2 * (2 * seq * seq * d))


def norm_layer(name: str, width: int) -> Layer:
    return Layer(name, "norm", 2 * width, 0)


def embedding_layer(name: str, rows: int, d: int) -> Layer:
    return Layer(name, "embedding", rows * d, 0)


def extractor_layers(cfg: ExtractorConfig, height: int, width: int) -> list[Layer]:
    s = cfg.stem_stride
    h, w = (height - s) // s + 1, (width - s) // s + 1
    c = cfg.widths[0]
    pad = cfg.kernel_size // 2
    out = [conv_layer("extractor.stem", cfg.in_channels, c, s, h, w), norm_layer("extractor.stem_norm", c)]
    for si, (depth, width_) in enumerate(zip(cfg.depths, cfg.widths)):
        pre = f"extractor.stages.{si}"
        if si > 0:
            out.append(norm_layer(f"{pre}.down.norm", c))
            h, w = (h - 2) // 2 + 1, (w - 2) // 2 + 1
            out.append(conv_layer(f"{pre}.down.conv", c, width_, 2, h, w))
            c = width_
        for b in range(depth):
            bp = f"{pre}.blocks.{b}"
            hk, wk = h + 2 * pad - cfg.kernel_size + 1, w + 2 * pad - cfg.kernel_size + 1
            out += [depthwise_layer(f"{bp}.dw", c, cfg.kernel_size, hk, wk),
                    norm_layer(f"{bp}.norm", c),
                    linear_layer(f"{bp}.fc1", c, 4 * c, tokens=h * w),
                    linear_layer(f"{bp}.fc2", 4 * c, c, tokens=h * w)]
    out.append(norm_layer("extractor.head_norm", c))
    return out


def decoder_layers(cfg: DecoderConfig, d_feat: int, seq_len: int, n_prefix: int = 1,
                   projector_hidden: int = 0) -> list[Layer]:
    d = cfg.d_model
    hid = projector_hidden or d
    S = n_prefix + seq_len - 1
    out = [linear_layer("projector.fc1", d_feat, hid),
           linear_layer("projector.fc2", hid, hid),
           linear_layer("projector.fc3", hid, n_prefix * d),
           embedding_layer("decoder.tok_emb", cfg.vocab_size, d),
           embedding_layer("decoder.pos_emb", cfg.max_positions, d)]
    for l in range(cfg.layers):
        lp = f"decoder.blocks.{l}"
        out += [norm_layer(f"{lp}.ln1", d),
                linear_layer(f"{lp}.attn.qkv", d, 3 * d, tokens=S),
                attention_layer(f"{lp}.attn.core", S, d),
                linear_layer(f"{lp}.attn.out", d, d, tokens=S),
                norm_layer(f"{lp}.ln2", d),
                linear_layer(f"{lp}.mlp.fc1", d, cfg.d_ff, tokens=S),
                linear_layer(f"{lp}.mlp.fc2", cfg.d_ff, d, tokens=S)]
    out += [norm_layer("decoder.final_norm", d),
            linear_layer("decoder.lm_head", d, cfg.vocab_size, tokens=S, bias=False)]
    return out


def head_layers(tasks, d_feat: int) -> list[Layer]:
    return [linear_layer(f"heads.{t.name}", d_feat, t.num_classes) for t in tasks]


def model_layers(extractor: ExtractorConfig, decoder: DecoderConfig | None, tasks, setting: str,
                 image_shape: tuple[int, int], seq_len: int = 0, n_prefix: int = 1,
                 projector_hidden: int = 0) -> list[Layer]:
    """Layer list for a configuration; no weights are allocated."""
    layers = extractor_layers(extractor, *image_shape)
    if setting == E_TAG:
        layers += decoder_layers(decoder, extractor.feature_dim, seq_len, n_prefix, projector_hidden)
    else:
        layers += head_layers(tasks, extractor.feature_dim)
    return layers


def total_flops(layers: list[Layer]) -> int:
    heads = [l.flops for l in layers if l.name.startswith("heads.")]
    rest = sum(l.flops for l in layers if not l.name.startswith("heads."))
    return rest + (max(heads) if heads else 0)


@dataclass
class ComplexityReport:
    flops_per_image: int
    parameter_count: int
    train_ms_per_image: float = 0.0
    infer_ms_per_image: float = 0.0
    batch_size: int = 0
    layers: list[Layer] = field(default_factory=list)
    convention: str = CONVENTION

    def to_kv(self) -> str:
        rows = [("flops_per_image", self.flops_per_image), ("gflops_per_image", self.flops_per_image / 1e9),
                ("parameter_count", self.parameter_count), ("params_millions", self.parameter_count / 1e6),
                ("train_ms_per_image", self.train_ms_per_image), ("infer_ms_per_image", self.infer_ms_per_image),
                ("batch_size", self.batch_size), ("convention", self.convention)]
        return "".join(f"{k}\t{v}\n" for k, v in rows)


def count_complexity(bundle: ModelBundle, image_shape: tuple[int, int]) -> ComplexityReport:
    """Analytic FLOPs and parameters; parameters also agree with the allocated tensors."""
    layers = model_layers(bundle.extractor, bundle.decoder, bundle.tasks, bundle.setting, image_shape,
                          bundle.seq_len, bundle.n_prefix, bundle.projector_hidden)
    params = sum(l.params for l in layers)
    if bundle.params and params != bundle.parameter_count():
        raise AssertionError(f"analytic parameter count {params} != allocated {bundle.parameter_count()}")
    return ComplexityReport(total_flops(layers), params, layers=layers)


def large_scale_configs(vocab_size: int = 50272) -> tuple[ExtractorConfig, DecoderConfig]:
    """A ConvNeXt-L-like extractor and a 12-layer, 12-head, width-768 decoder."""
    return (ExtractorConfig(depths=(3, 3, 27, 3), widths=(192, 384, 768, 1536)),
            DecoderConfig(layers=12, heads=12, d_model=768, vocab_size=vocab_size, max_positions=2048))


def _median_ms(fn, iters: int, warmup: int) -> float:
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(iters):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return 1e3 * statistics.median(times)


def measure_times(bundle: ModelBundle, image_shape: tuple[int, int], batch_size: int = 8, iters: int = 20,
                  warmup: int = 3, seed: int = 0) -> tuple[float, float]:
    """Median per-image milliseconds for (forward + backward, inference forward).

    Training time excludes the optimiser update; inference is one
    teacher-forced pass for generative bundles (greedy decoding reuses it
    step by step).
    """
    rng = np.random.default_rng(seed)
    images = rng.random((batch_size, bundle.extractor.in_channels, *image_shape), dtype=np.float32)
    task = bundle.tasks[0]
    if bundle.generative:
        tokens = np.full((batch_size, bundle.seq_len), PAD, dtype=np.int64)
        tokens[:, 0], tokens[:, 1] = BOS, EOS

        def forward():
            return ops.cross_entropy(forward_teacher_forced(bundle, images, tokens), tokens, ignore_index=PAD)
    else:
        targets = np.zeros(batch_size, dtype=np.int64)

        def forward():
            return ops.cross_entropy(classify_head(bundle, extract_features(bundle, images), task.name), targets)

    def train_step():
        with Tape() as tape:
            loss = forward()
        backward(loss, tape)
        for p in bundle.params.values():
            p.zero_grad()

    def infer_step():
        with no_grad():
            forward()

    train_ms = _median_ms(train_step, iters, warmup) / batch_size
    infer_ms = _median_ms(infer_step, iters, warmup) / batch_size
    return train_ms, infer_ms


def profile(bundle: ModelBundle, image_shape: tuple[int, int], batch_size: int = 8, iters: int = 20,
            warmup: int = 3) -> ComplexityReport:
    if iters < 20 or warmup < 3:
        raise ValueError("profiling needs at least 20 timed iterations after 3 warm-ups")
    report = count_complexity(bundle, image_shape)
    report.train_ms_per_image, report.infer_ms_per_image = measure_times(bundle, image_shape, batch_size,
                                                                         iters, warmup)
    report.batch_size = batch_size
    return report
