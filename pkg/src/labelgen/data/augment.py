"""Training-time augmentation and bilinear resizing.

``augment`` draws its random numbers in this fixed order, whether or not a
gated step ends up being applied:

1. flip coin (uniform)
2. rotation degrees, x shift, y shift, scale (4 uniforms)
3. blur sigma (uniform)
4. noise gate (uniform), noise sigma (uniform), noise field (3*H*W normals)
5. colour gate (uniform), per-channel gains (3 uniforms)
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..numerics.rng import Rng


@dataclass(frozen=True)
class AugmentConfig:
    flip_p: float = 0.5
    max_rotation_deg: float = 15.0
    max_translate: float = 0.10
    scale_range: tuple[float, float] = (0.9, 1.1)
    blur_sigma: tuple[float, float] = (0.1, 1.0)
    noise_p: float = 0.5
    noise_sigma: tuple[float, float] = (0.0, 0.05)
    color_p: float = 0.5
    color_gain: float = 0.10


@dataclass
class AugmentTrace:
    flipped: bool
    noise_applied: bool
    color_applied: bool


def _affine(image: np.ndarray, angle_deg: float, tx: float, ty: float, scale: float) -> np.ndarray:
    c, h, w = image.shape
    a = math.radians(angle_deg)
    cos, sin = math.cos(a), math.sin(a)
    # maps output (row, col) to input coordinates: rotate by -a, divide by scale
    inv = np.array([[cos, sin], [-sin, cos]]) / scale
    centre = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    shift = np.array([ty * h, tx * w])
    offset = centre - inv @ (centre + shift)
    matrix = np.zeros((3, 3))
    matrix[0, 0] = 1.0
    matrix[1:, 1:] = inv
    return ndimage.affine_transform(image, matrix, offset=np.concatenate([[0.0], offset]),
                                    order=1, mode="reflect")


def augment(image: np.ndarray, rng: Rng, cfg: AugmentConfig = AugmentConfig(),
            trace: AugmentTrace | None = None) -> np.ndarray:
    """Flip, affine and blur always; noise and colour change each with p=0.5.

    ``image`` is [3, H, W] in [0, 1]; the result has the same shape and range.
    """
    c, h, w = image.shape
    flip = rng.random() < cfg.flip_p
    angle = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg)
    tx = rng.uniform(-cfg.max_translate, cfg.max_translate)
    ty = rng.uniform(-cfg.max_translate, cfg.max_translate)
    scale = rng.uniform(*cfg.scale_range)
    sigma = rng.uniform(*cfg.blur_sigma)
    noise_on = rng.random() < cfg.noise_p
    noise_sigma = rng.uniform(*cfg.noise_sigma)
    noise = rng.normal(0.0, 1.0, size=(c, h, w))
    color_on = rng.random() < cfg.color_p
    gains = rng.uniform(1.0 - cfg.color_gain, 1.0 + cfg.color_gain, size=c)

    out = image.astype(np.float64)
    if flip:
        out = out[:, :, ::-1]
    out = _affine(out, angle, tx, ty, scale)
    out = ndimage.gaussian_filter(out, sigma=(0.0, sigma, sigma), mode="reflect")
    if noise_on:
        out = out + noise_sigma * noise
    if color_on:
        out = out * gains[:, None, None]
    if trace is not None:
        trace.flipped, trace.noise_applied, trace.color_applied = flip, noise_on, color_on
    return np.clip(out, 0.0, 1.0).astype(image.dtype)


def _interp_axis(n_in: int, n_out: int):
    """Source indices and weights for half-pixel-centre linear interpolation."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def resize(image: np.ndarray, target: int) -> np.ndarray:
    """Bilinear resize of a [C, H, W] image to [C, target, target]."""
    c, h, w = image.shape
    if (h, w) == (target, target):
        return image
    y0, y1, fy = _interp_axis(h, target)
    x0, x1, fx = _interp_axis(w, target)
    img = image.astype(np.float64)
    rows = img[:, y0, :] * (1 - fy)[None, :, None] + img[:, y1, :] * fy[None, :, None]
    out = rows[:, :, x0] * (1 - fx)[None, None, :] + rows[:, :, x1] * fx[None, None, :]
    return out.astype(image.dtype)
