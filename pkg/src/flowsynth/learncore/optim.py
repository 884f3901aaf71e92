from __future__ import annotations

import logging

import numpy as np

from .autograd import Tensor

log = logging.getLogger(__name__)


class Adam:
    """Adam with bias correction. Steps with non-finite gradients are skipped."""

    def __init__(self, params: dict[str, Tensor], lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0
        self.skipped = 0

    def step(self, grads: dict[str, np.ndarray] | None = None) -> bool:
        if grads is None:
            grads = {k: p.grad for k, p in self.params.items() if p.grad is not None}
        if not all(np.all(np.isfinite(g)) for g in grads.values()):
            self.skipped += 1
            log.warning("non-finite gradient, Adam step skipped (%d so far)", self.skipped)
            return False
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1 ** self.t
        corr2 = 1.0 - b2 ** self.t
        for k, g in grads.items():
            m = self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            v = self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g
            p = self.params[k]
            p.data = p.data - self.lr * (m / corr1) / (np.sqrt(v / corr2) + self.eps)
        return True


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: dict,
              lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8) -> dict[str, np.ndarray]:
    """Functional Adam update; ``state`` carries ``t``, ``m`` and ``v`` between calls."""
    if not all(np.all(np.isfinite(g)) for g in grads.values()):
        log.warning("non-finite gradient, Adam step skipped")
        return dict(params)
    t = state["t"] = state.get("t", 0) + 1
    m = state.setdefault("m", {})
    v = state.setdefault("v", {})
    out = {}
    for k, x in params.items():
        g = grads.get(k)
        if g is None:
            out[k] = x
            continue
        m[k] = beta1 * m.get(k, 0.0) + (1.0 - beta1) * g
        v[k] = beta2 * v.get(k, 0.0) + (1.0 - beta2) * g * g
        mhat = m[k] / (1.0 - beta1 ** t)
        vhat = v[k] / (1.0 - beta2 ** t)
        out[k] = x - lr * mhat / (np.sqrt(vhat) + eps)
    return out


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for k in grads:
            grads[k] = grads[k] * scale
    return total
