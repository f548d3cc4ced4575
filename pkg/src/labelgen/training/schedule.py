"""Cosine annealing with warm restarts."""
from __future__ import annotations

import math


def cosine_lr(t_cur: float, t_i: float, base_lr: float, eta_min: float = 0.0) -> float:
    return eta_min + 0.5 * (base_lr - eta_min) * (1.0 + math.cos(math.pi * t_cur / t_i))


def scheduler_lr(epoch: float, base_lr: float, t0: float = 10, t_mult: float = 2, eta_min: float = 0.0) -> float:
    """Learning rate at fractional ``epoch``.

    Cycles last t0, t0*t_mult, t0*t_mult^2, ... epochs; each restart resets the
    position within the cycle to 0 (and the rate to ``base_lr``).
    """
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    t_cur, t_i = float(epoch), float(t0)
    while t_cur >= t_i:
        t_cur -= t_i
        t_i *= t_mult
    return cosine_lr(t_cur, t_i, base_lr, eta_min)
