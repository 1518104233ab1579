"""Central finite differences, the independent oracle for every gradient rule."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor, backward, no_grad

REL_TOL = 1e-6
ABS_FLOOR = 1e-9


def _scalar(value) -> float:
    if isinstance(value, Tensor):
        value = value.data
    arr = np.asarray(value, dtype=np.float64)
    if arr.size != 1:
        raise ValueError(f"finite_diff_grad: f must return a scalar, got shape {arr.shape}")
    return float(arr.reshape(-1)[0])


def finite_diff_grad(f: Callable, x: Tensor, h: float = 1e-6) -> np.ndarray:
    """Estimate df/dx by ``(f(x + h e_i) - f(x - h e_i)) / 2h`` for every coordinate.

    ``x.data`` is perturbed in place and restored; ``f`` runs without the tape.
    """
    if h <= 0:
        raise ValueError("finite_diff_grad: h must be positive")
    base = x.data
    work = base.copy()
    flat = work.reshape(-1)
    grad = np.empty(base.size)
    x.data = work
    try:
        with no_grad():
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                fp = _scalar(f(x))
                flat[i] = orig - h
                fm = _scalar(f(x))
                flat[i] = orig
                grad[i] = (fp - fm) / (2.0 * h)
    finally:
        x.data = base
    return grad.reshape(base.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Worst elementwise ``|a - n| / max(|a|, |n|)``; the denominator is floored so that
    near-zero gradients are judged by the absolute floor instead.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), ABS_FLOOR / REL_TOL)
    return float(np.max(np.abs(a - n) / denom))


def check_gradients(loss_fn: Callable[[], Tensor], params: dict[str, Tensor], h: float = 1e-6) -> dict:
    """Compare backward() against finite differences for each named parameter.

    Args:
        loss_fn: zero-argument callable rebuilding the scalar loss from current parameter values.
        params: tensors to check.

    Returns:
        ``{name: worst relative error}``.
    """
    for p in params.values():
        p.grad = None
    backward(loss_fn())
    errors = {}
    for name, p in params.items():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        numeric = finite_diff_grad(lambda _x: loss_fn(), p, h)
        errors[name] = relative_error(analytic, numeric)
    return errors
