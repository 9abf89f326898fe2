"""Central finite-difference oracle for analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ndpr import autodiff as ad


def analytic(build: Callable[[], ad.Tensor], params: Sequence[ad.Parameter]) -> list[np.ndarray]:
    for p in params:
        p.zero_grad()
    with ad.Tape():
        loss = build()
    ad.backward(loss)
    return [p.grad.copy() for p in params]


def numeric(build: Callable[[], ad.Tensor], params: Sequence[ad.Parameter],
            eps: float = 1e-4) -> list[np.ndarray]:
    grads = []
    for p in params:
        g = np.zeros(p.shape)
        flat, gflat = p.data.reshape(-1), g.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            up = build().item()
            flat[k] = orig - eps
            down = build().item()
            flat[k] = orig
            gflat[k] = (up - down) / (2 * eps)
        grads.append(g)
    return grads


def max_relative_error(build, params, eps: float = 1e-4, floor: float = 1e-6) -> float:
    """max |a - n| / max(|a|, |n|, floor) over every entry of every parameter."""
    worst = 0.0
    for a, n in zip(analytic(build, params), numeric(build, params, eps)):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float((np.abs(a - n) / denom).max(initial=0.0)))
    return worst
