from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import Tensor


class DivergenceError(FloatingPointError):
    pass


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update.

    ``params`` maps names to :class:`Tensor` (updated in place), ``grads`` maps
    the same names to arrays.  Missing gradients count as zero.
    """
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise DivergenceError(f"divergent gradient in parameter {name!r}")
    state.t += 1
    c1 = 1 - beta1 ** state.t
    c2 = 1 - beta2 ** state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if p.data.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter "
                             f"{name!r} of shape {p.data.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        step = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.data -= step.astype(p.data.dtype, copy=False)
    return params, state


class Adam:
    """Adam over named parameter groups, each with its own learning rate."""

    def __init__(self, groups, betas=(0.9, 0.999), eps=1e-8):
        # groups: list of (params dict, lr)
        self.groups = [(dict(p), lr) for p, lr in groups]
        self.betas = betas
        self.eps = eps
        self.states = [AdamState() for _ in self.groups]

    def zero_grad(self):
        for params, _ in self.groups:
            for p in params.values():
                p.grad = None

    def reset(self):
        """Forget the moment estimates (e.g. when the objective changes)."""
        self.states = [AdamState() for _ in self.groups]

    def scale_lr(self, factor: float):
        self.groups = [(p, lr * factor) for p, lr in self.groups]

    def step(self):
        for (params, lr), state in zip(self.groups, self.states):
            grads = {name: p.grad for name, p in params.items()}
            adam_step(params, grads, state, lr, *self.betas, self.eps)


def named_params(prefix: str, tensors) -> dict[str, Tensor]:
    return {f"{prefix}{i}": t for i, t in enumerate(tensors)}
