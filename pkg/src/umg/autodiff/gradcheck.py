"""Central finite-difference oracle for the tape."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


def numeric_grad(fn: Callable[[], Tensor], param: Tensor, h: float = 1e-6,
                 indices: Sequence[tuple] | None = None) -> np.ndarray:
    """d fn() / d param by central differences (only at ``indices`` if given)."""
    grad = np.zeros_like(param.data, dtype=np.float64)
    flat_idx = indices if indices is not None else list(np.ndindex(param.shape))
    for idx in flat_idx:
        old = param.data[idx]
        param.data[idx] = old + h
        up = float(fn().data)
        param.data[idx] = old - h
        down = float(fn().data)
        param.data[idx] = old
        grad[idx] = (up - down) / (2 * h)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """max |a - n| / max(|a|, |n|, floor) -- scale taken over the whole array
    so that entries that are near zero do not blow the ratio up."""
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), floor)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def check_gradients(fn: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-6,
                    indices: dict | None = None) -> float:
    """Worst relative error between tape gradients and finite differences."""
    loss = fn()
    grads = backward(loss)
    worst = 0.0
    for p in params:
        analytic = grads.get(p, np.zeros_like(p.data))
        idx = None if indices is None else indices.get(id(p))
        numeric = numeric_grad(fn, p, h=h, indices=idx)
        if idx is not None:
            analytic = np.array([analytic[i] for i in idx])
            numeric = np.array([numeric[i] for i in idx])
        worst = max(worst, max_relative_error(analytic, numeric))
    return worst
