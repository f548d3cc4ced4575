"""Central-difference gradient checking."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor, backward


@dataclass
class GradCheckReport:
    max_rel_err: float
    max_abs_err: float
    n_probes: int
    passed: bool

    def __bool__(self) -> bool:
        return self.passed


def _scalarize(out: Tensor, projection: np.ndarray | None):
    if out.data.size == 1:
        return out
    return (out * Tensor(projection)).sum()


def grad_check(fn: Callable[..., Tensor], inputs: Tensor | Sequence[Tensor], tol: float = 1e-4,
               max_probes: int | None = None, seed: int = 0, floor: float = 1e-6) -> GradCheckReport:
    """Compare tape gradients of ``fn(*inputs)`` with central differences.

    Non-scalar outputs are contracted with a fixed random projection first.
    The step for element x is ``1e-4 * max(1, |x|)``.  Relative error per
    element is ``|a - n| / max(|a|, |n|, floor)``; ``max_probes`` limits how
    many elements of each input are perturbed.  Inputs should be float64.
    """
    if isinstance(inputs, Tensor):
        inputs = [inputs]
    inputs = list(inputs)
    rng = np.random.default_rng(seed)

    probe = fn(*inputs)
    projection = None if probe.data.size == 1 else rng.standard_normal(probe.shape).astype(probe.dtype)

    saved = [t.grad for t in inputs]
    saved_flags = [t.requires_grad for t in inputs]
    for t in inputs:
        t.requires_grad = True
        t.grad = np.zeros_like(t.data)
    with Tape() as tape:
        loss = _scalarize(fn(*inputs), projection)
    if loss.requires_grad:
        backward(loss, tape)
    analytic = [t.grad.copy() for t in inputs]
    for t, g, f in zip(inputs, saved, saved_flags):
        t.grad, t.requires_grad = g, f

    def value() -> float:
        return float(_scalarize(fn(*inputs), projection).data)

    max_rel = 0.0
    max_abs = 0.0
    probes = 0
    for t, a in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_probes is not None and flat.size > max_probes:
            idx = rng.choice(flat.size, size=max_probes, replace=False)
        af = a.reshape(-1)
        for i in idx:
            x0 = flat[i]
            h = 1e-4 * max(1.0, abs(float(x0)))
            flat[i] = x0 + h
            up = value()
            flat[i] = x0 - h
            down = value()
            flat[i] = x0
            num = (up - down) / (2 * h)
            err = abs(float(af[i]) - num)
            rel = err / max(abs(float(af[i])), abs(num), floor)
            max_rel = max(max_rel, rel)
            max_abs = max(max_abs, err)
            probes += 1
    return GradCheckReport(max_rel, max_abs, probes, max_rel < tol)
