"""Gradient verification by central finite differences."""

import numpy as np

from .tensor import Tensor, backward, no_grad


def grad_errors(fn, tensors, h=1e-5, sample=0, sample_seed=0):
    """Per-tensor max relative error of tape gradients vs central differences.

    `tensors` are the leaves fn differentiates through; each is promoted to
    float64 in place for the duration of the check and restored after. The
    relative error at a coordinate is |a - n| / max(|a|, |n|, 1e-8); every
    coordinate is probed unless `sample` > 0, which caps the probe count per
    tensor (seeded choice) for large configurations.
    """
    originals = [t.data for t in tensors]
    for t in tensors:
        t.data = t.data.astype(np.float64)
        t.grad = None
        t.requires_grad = True
    try:
        loss = fn(*tensors)
        backward(loss)
        analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
                    for t in tensors]
        errors = []
        rng = np.random.default_rng(sample_seed)
        with no_grad():
            for t, a in zip(tensors, analytic):
                flat = t.data.reshape(-1)
                coords = np.arange(flat.size)
                if sample and flat.size > sample:
                    coords = np.sort(rng.choice(flat.size, size=sample, replace=False))
                worst = 0.0
                for i in coords:
                    keep = flat[i]
                    flat[i] = keep + h
                    up = fn(*tensors).item()
                    flat[i] = keep - h
                    down = fn(*tensors).item()
                    flat[i] = keep
                    numeric = (up - down) / (2.0 * h)
                    ai = float(a.reshape(-1)[i])
                    err = abs(ai - numeric) / max(abs(ai), abs(numeric), 1e-8)
                    if err > worst:
                        worst = err
                errors.append(worst)
        return errors
    finally:
        for t, orig in zip(tensors, originals):
            t.data = orig
            t.grad = None


def grad_check(fn, tensors, h=1e-5):
    """Max relative error over every coordinate of every tensor (see grad_errors).

    `tensors` is one Tensor or a sequence of them.
    """
    if isinstance(tensors, Tensor):
        tensors = [tensors]
    return max(grad_errors(fn, tensors, h=h))
