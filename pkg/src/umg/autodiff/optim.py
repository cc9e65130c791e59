"""Adam and RMSProp over lists of leaf tensors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import DimensionError, Tensor


@dataclass
class OptimizerState:
    kind: str
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    decay: float = 0.9
    eps: float = 1e-8
    step: int = 0
    first: list[np.ndarray] = field(default_factory=list)
    second: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("adam", "rmsprop"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")


def adam(params: list[Tensor], lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999,
         eps: float = 1e-8) -> OptimizerState:
    return _init(OptimizerState("adam", lr, beta1=beta1, beta2=beta2, eps=eps), params)


def rmsprop(params: list[Tensor], lr: float = 1e-3, decay: float = 0.9, eps: float = 1e-10) -> OptimizerState:
    return _init(OptimizerState("rmsprop", lr, decay=decay, eps=eps), params)


def _init(state: OptimizerState, params: list[Tensor]) -> OptimizerState:
    state.first = [np.zeros_like(p.data) for p in params] if state.kind == "adam" else []
    state.second = [np.zeros_like(p.data) for p in params]
    return state


def optimizer_step(state: OptimizerState, params: list[Tensor], grads: list[np.ndarray | None]) -> None:
    """Update ``params`` in place. A ``None`` gradient counts as zero."""
    if len(params) != len(grads) or len(params) != len(state.second):
        raise DimensionError("optimizer_step: params, grads and state disagree in length")
    state.step += 1
    t = state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape or state.second[i].shape != p.data.shape:
            raise DimensionError(f"optimizer_step: param {p.shape} vs grad {g.shape}")
        g = g.astype(p.data.dtype, copy=False)
        if state.kind == "adam":
            m, v = state.first[i], state.second[i]
            m *= state.beta1
            m += (1 - state.beta1) * g
            v *= state.beta2
            v += (1 - state.beta2) * g * g
            m_hat = m / (1 - state.beta1 ** t)
            v_hat = v / (1 - state.beta2 ** t)
            p.data -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.data.dtype)
        else:
            v = state.second[i]
            v *= state.decay
            v += (1 - state.decay) * g * g
            p.data -= (state.lr * g / (np.sqrt(v) + state.eps)).astype(p.data.dtype)
