"""Forward passes: feature extractor, projector, decoder and task heads.

The extractor runs channels-last internally.  Decoder inputs are
``[prefix ; BOS, t_1, ..., t_{T-2}]`` and the logits read out at positions
``n_prefix - 1 ... n_prefix + T - 2`` predict tokens ``0 ... T-1``, so the
last prefix position predicts the BOS token itself.
"""
from __future__ import annotations

import numpy as np

from ..numerics import ops
from ..numerics.tensor import ShapeError, Tensor
from ..tokenizer import BOS
from .bundle import ModelBundle

LN_EPS = 1e-6


def _as_images(images, dtype) -> Tensor:
    if isinstance(images, Tensor):
        return images
    return Tensor(np.asarray(images, dtype=dtype))


def _ln(x: Tensor, p: dict, prefix: str) -> Tensor:
    return ops.layer_norm(x, p[f"{prefix}.gain"], p[f"{prefix}.shift"], LN_EPS)


def _lin(x: Tensor, p: dict, prefix: str) -> Tensor:
    return ops.linear(x, p[f"{prefix}.weight"], p.get(f"{prefix}.bias"))


def extract_features(bundle: ModelBundle, images) -> Tensor:
    """[N, 3, H, W] images -> [N, d_feat] pooled features."""
    cfg = bundle.extractor
    p = bundle.params
    x = _as_images(images, p["extractor.stem.weight"].dtype)
    if x.ndim != 4 or x.shape[1] != cfg.in_channels:
        raise ShapeError(f"expected images [N, {cfg.in_channels}, H, W], got {x.shape}")
    if x.shape[2] < cfg.stem_stride or x.shape[3] < cfg.stem_stride:
        raise ShapeError(f"image {x.shape[2]}x{x.shape[3]} smaller than the stem stride {cfg.stem_stride}")
    x = ops.transpose(x, (0, 2, 3, 1))
    x = ops.conv2d(x, p["extractor.stem.weight"], p["extractor.stem.bias"], stride=cfg.stem_stride,
                   channels_last=True)
    x = _ln(x, p, "extractor.stem_norm")
    pad = cfg.kernel_size // 2
    for si, depth in enumerate(cfg.depths):
        pre = f"extractor.stages.{si}"
        if si > 0:
            x = _ln(x, p, f"{pre}.down.norm")
            if x.shape[1] < 2 or x.shape[2] < 2:
                raise ShapeError(f"feature map {x.shape[1]}x{x.shape[2]} too small to downsample at stage {si}")
            x = ops.conv2d(x, p[f"{pre}.down.conv.weight"], p[f"{pre}.down.conv.bias"], stride=2,
                           channels_last=True)
        for b in range(depth):
            bp = f"{pre}.blocks.{b}"
            h = ops.depthwise_conv2d(x, p[f"{bp}.dw.weight"], p[f"{bp}.dw.bias"], stride=1, padding=pad,
                                     channels_last=True)
            h = _ln(h, p, f"{bp}.norm")
            h = ops.gelu(_lin(h, p, f"{bp}.fc1"))
            h = _lin(h, p, f"{bp}.fc2")
            x = x + h
    x = ops.mean(x, axis=(1, 2))
    return _ln(x, p, "extractor.head_norm")


def project(bundle: ModelBundle, features: Tensor) -> Tensor:
    """[N, d_feat] -> [N, n_prefix, d_model] prefix embeddings."""
    p = bundle.params
    h = ops.gelu(_lin(features, p, "projector.fc1"))
    h = ops.gelu(_lin(h, p, "projector.fc2"))
    h = _lin(h, p, "projector.fc3")
    return ops.reshape(h, (features.shape[0], bundle.n_prefix, bundle.decoder.d_model))


def decoder_hidden(bundle: ModelBundle, prefix: Tensor, input_ids: np.ndarray) -> Tensor:
    """Run the causal decoder over ``[prefix ; embed(input_ids)]``; returns logits [N, S, V]."""
    cfg = bundle.decoder
    p = bundle.params
    ids = np.asarray(input_ids, dtype=np.int64)
    n, length = ids.shape
    if ids.size and ids.max() >= cfg.vocab_size:
        raise IndexError(f"token id {int(ids.max())} >= vocabulary size {cfg.vocab_size}")
    seq = prefix.shape[1] + length
    if seq > cfg.max_positions:
        raise ShapeError(f"sequence of {seq} positions exceeds max_positions {cfg.max_positions}")
    parts = [prefix]
    if length:
        parts.append(ops.embedding(p["decoder.tok_emb"], ids))
    x = ops.concat(parts, axis=1) if len(parts) > 1 else prefix
    x = x + ops.getitem(p["decoder.pos_emb"], slice(0, seq))
    d, h = cfg.d_model, cfg.heads
    dk = d // h
    for l in range(cfg.layers):
        lp = f"decoder.blocks.{l}"
        a = _ln(x, p, f"{lp}.ln1")
        qkv = ops.reshape(_lin(a, p, f"{lp}.attn.qkv"), (n, seq, 3, h, dk))
        qkv = ops.transpose(qkv, (2, 0, 3, 1, 4))
        att = ops.attention(ops.getitem(qkv, 0), ops.getitem(qkv, 1), ops.getitem(qkv, 2), causal_mask=True)
        att = ops.reshape(ops.transpose(att, (0, 2, 1, 3)), (n, seq, d))
        x = x + _lin(att, p, f"{lp}.attn.out")
        m = _ln(x, p, f"{lp}.ln2")
        m = _lin(ops.gelu(_lin(m, p, f"{lp}.mlp.fc1")), p, f"{lp}.mlp.fc2")
        x = x + m
    x = _ln(x, p, "decoder.final_norm")
    return ops.linear(x, p["decoder.lm_head.weight"])


def _require_generative(bundle: ModelBundle) -> None:
    if not bundle.generative:
        raise ValueError("operation needs a generative (E_TAG) bundle")


def forward_teacher_forced(bundle: ModelBundle, images, target_tokens) -> Tensor:
    """Logits [N, T, V]; position j scores token j given the prefix and tokens < j."""
    _require_generative(bundle)
    targets = np.asarray(target_tokens, dtype=np.int64)
    if targets.ndim != 2:
        raise ShapeError("target_tokens must be [N, T]")
    prefix = project(bundle, extract_features(bundle, images))
    return forward_from_prefix(bundle, prefix, targets)


def forward_from_prefix(bundle: ModelBundle, prefix: Tensor, target_tokens: np.ndarray) -> Tensor:
    T = target_tokens.shape[1]
    logits = decoder_hidden(bundle, prefix, target_tokens[:, :T - 1])
    P = bundle.n_prefix
    if P == 1:
        return logits
    return ops.getitem(logits, (slice(None), slice(P - 1, P - 1 + T)))


def decode_step(bundle: ModelBundle, prefix: Tensor, generated_ids) -> Tensor:
    """Next-token logits after ``[prefix ; BOS, generated_ids...]``.

    ``prefix`` may be [n_prefix, d] for one image or [N, n_prefix, d] with
    ``generated_ids`` of shape [N, k]; returns [V] or [N, V] respectively.
    """
    _require_generative(bundle)
    single = prefix.ndim == 2
    if single:
        prefix = ops.reshape(prefix, (1,) + prefix.shape)
        gen = np.asarray(generated_ids, dtype=np.int64).reshape(1, -1)
    else:
        gen = np.asarray(generated_ids, dtype=np.int64).reshape(prefix.shape[0], -1)
    ids = np.concatenate([np.full((gen.shape[0], 1), BOS, dtype=np.int64), gen], axis=1)
    logits = decoder_hidden(bundle, prefix, ids)
    last = ops.getitem(logits, (slice(None), -1))
    return ops.getitem(last, 0) if single else last


def classify_head(bundle: ModelBundle, features: Tensor, task: str) -> Tensor:
    if bundle.generative:
        raise ValueError("no heads in generative bundle")
    name = f"heads.{task}"
    if f"{name}.weight" not in bundle.params:
        raise KeyError(f"no head for task {task!r}")
    return _lin(features, bundle.params, name)
