"""Adaptive-moment stochastic optimizer.

``adam_step`` is a pure function: it never mutates its inputs and identical
inputs produce bit-identical outputs, which is what makes seeded training runs
reproducible. The :class:`Adam` wrapper binds that function to a dict of named
parameter tensors for use in training loops.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ShapeError
from .tensor import Tensor


@dataclass
class AdamState:
    step: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params: dict[str, np.ndarray], lr: float,
              beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> AdamState:
    if lr <= 0:
        raise ContractError(f"learning rate must be positive, got {lr}")
    return AdamState(
        step=0,
        m={k: np.zeros_like(p) for k, p in params.items()},
        v={k: np.zeros_like(p) for k, p in params.items()},
        lr=lr, beta1=beta1, beta2=beta2, eps=eps,
    )


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected update. Returns fresh params and state."""
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            raise ContractError(f"missing gradient for parameter '{name}'")
        if g.shape != p.shape:
            raise ShapeError(
                f"gradient shape {g.shape} does not match parameter "
                f"'{name}' shape {p.shape}")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_params: dict[str, np.ndarray] = {}
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    for name, p in params.items():
        g = grads[name]
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        new_params[name] = p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[name] = m
        new_v[name] = v
    return new_params, AdamState(step=t, m=new_m, v=new_v, lr=state.lr,
                                 beta1=b1, beta2=b2, eps=state.eps)


class Adam:
    """Stateful convenience wrapper around :func:`adam_step`.

    Holds the moment buffers for a fixed dict of named parameter tensors and
    writes updates back into their ``.data`` arrays.
    """

    def __init__(self, params: dict[str, Tensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self._params = params
        self.state = adam_init({k: t.data for k, t in params.items()},
                               lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def step(self) -> None:
        grads = {}
        for name, t in self._params.items():
            grads[name] = t.grad if t.grad is not None else np.zeros_like(t.data)
        values = {k: t.data for k, t in self._params.items()}
        new_values, self.state = adam_step(values, grads, self.state)
        for name, t in self._params.items():
            t.data = new_values[name]

    def set_lr(self, lr: float) -> None:
        if lr <= 0:
            raise ContractError(f"learning rate must be positive, got {lr}")
        self.state.lr = lr

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.zero_grad()
