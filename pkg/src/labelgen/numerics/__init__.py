"""Tensor math with reverse-mode differentiation."""
from . import ops
from .gradcheck import GradCheckReport, grad_check
from .ops import (
    attention,
    conv2d,
    cross_entropy,
    depthwise_conv2d,
    embedding,
    gelu,
    layer_norm,
    linear,
    log_softmax,
    softmax,
)
from .optim import AdamW, MomentState, adamw_step
from .rng import Rng, derive_seed
from .tensor import Record, ShapeError, Tape, Tensor, backward, no_grad, record

__all__ = [
    "ops", "Tensor", "Tape", "Record", "ShapeError", "backward", "no_grad", "record",
    "attention", "conv2d", "cross_entropy", "depthwise_conv2d", "embedding", "gelu",
    "layer_norm", "linear", "log_softmax", "softmax",
    "AdamW", "MomentState", "adamw_step", "grad_check", "GradCheckReport", "Rng", "derive_seed",
]
