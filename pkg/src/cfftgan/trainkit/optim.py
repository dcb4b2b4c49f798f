"""Adam with bias correction, applied to named parameter sets."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..numcore import ShapeError, Tensor


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray


def adam_step(
    param: np.ndarray,
    grad: np.ndarray,
    state: AdamState,
    t: int,
    lr: float,
    beta1: float = 0.0,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> np.ndarray:
    """One bias-corrected Adam update at step ``t`` (1-based); updates ``state`` in place.

    Returns the new parameter array.
    """
    if not (param.shape == grad.shape == state.m.shape == state.v.shape):
        raise ShapeError(
            f"adam shapes disagree: param {param.shape}, grad {grad.shape}, "
            f"m {state.m.shape}, v {state.v.shape}"
        )
    if t < 1:
        raise ValueError("adam step counter starts at 1")
    g = grad.astype(param.dtype, copy=False)
    state.m = beta1 * state.m + (1 - beta1) * g
    state.v = beta2 * state.v + (1 - beta2) * (g * g)
    m_hat = state.m / (1 - beta1**t)
    v_hat = state.v / (1 - beta2**t)
    return (param - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(param.dtype, copy=False)


@dataclass
class Adam:
    """Optimiser over a fixed, ordered list of named tensors."""

    params: dict[str, Tensor]
    lr: float
    beta1: float = 0.0
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    state: dict[str, AdamState] = field(default_factory=dict)

    def __post_init__(self):
        for n, p in self.params.items():
            if n not in self.state:
                self.state[n] = AdamState(np.zeros_like(p.data), np.zeros_like(p.data))

    def step(self, grads: dict[str, np.ndarray | None]) -> None:
        """Apply one update; parameters without a gradient get a zero gradient."""
        unknown = set(grads) - set(self.params)
        if unknown:
            raise KeyError(f"gradients for unknown parameters: {sorted(unknown)[:3]}")
        self.t += 1
        for n, p in self.params.items():
            g = grads.get(n)
            if g is None:
                g = np.zeros_like(p.data)
            p.data = adam_step(p.data, g, self.state[n], self.t, self.lr, self.beta1, self.beta2, self.eps)
