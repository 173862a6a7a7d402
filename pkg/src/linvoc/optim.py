"""Bias-corrected Adam over named parameters."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .grad import Tensor

log = logging.getLogger(__name__)


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState, lr: float = 2e-4,
              beta1: float = 0.9, beta2: float = 0.98, eps: float = 1e-9) -> AdamState:
    """Update ``params`` in place. Refuses (raises, nothing changed) if any gradient is non-finite."""
    for name, g in grads.items():
        if params[name].shape != g.shape:
            raise ValueError(f"{name}: grad shape {g.shape} != param shape {params[name].shape}")
        if not np.isfinite(g).all():
            raise NonFiniteGradient(f"non-finite gradient for {name}")
    state.step += 1
    bc1 = 1.0 - beta1 ** state.step
    bc2 = 1.0 - beta2 ** state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        update = (lr / bc1) * m / (np.sqrt(v / bc2) + eps)
        p.data = (p.data - update).astype(p.dtype, copy=False)
    return state


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float = 2e-4, betas=(0.9, 0.98), eps: float = 1e-9):
        self.params = params
        self.lr, self.betas, self.eps = lr, tuple(betas), eps
        self.state = AdamState()

    def step(self):
        grads = {n: p.grad for n, p in self.params.items() if p.grad is not None}
        adam_step(self.params, grads, self.state, self.lr, self.betas[0], self.betas[1], self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def grad_norms(self) -> dict[str, float]:
        return {n: float(np.linalg.norm(p.grad)) for n, p in self.params.items() if p.grad is not None}

    def state_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for n in self.state.m:
            out[f"{prefix}/m/{n}"] = self.state.m[n]
            out[f"{prefix}/v/{n}"] = self.state.v[n]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], prefix: str, step: int):
        self.state = AdamState(step=step)
        for n, p in self.params.items():
            m, v = arrays.get(f"{prefix}/m/{n}"), arrays.get(f"{prefix}/v/{n}")
            if m is not None and v is not None:
                self.state.m[n] = m.astype(p.dtype)
                self.state.v[n] = v.astype(p.dtype)
