"""Float64 tensors with tape-based reverse-mode differentiation.

Each differentiable primitive appends one node ``(output, inputs, rule, name)``
to the thread's active tape. Nodes are appended in creation order, which is a
topological order, so :func:`backward` replays the list in reverse.

Forward products are evaluated so that one row's result never depends on its
neighbours: linear maps go through per-row vector-matrix products, batched
products through elementwise multiply + last-axis sum, and reductions over
attention keys through a sorted sequential sum. That is what makes padded
batches and row permutations bit-exact; backward rules use plain BLAS.
"""

from __future__ import annotations

import contextlib
import threading

import numpy as np
from scipy import special

from ..errors import ConfigError, NumericalFault, ShapeError, TapeError

_local = threading.local()
_SQRT_HALF = np.sqrt(0.5)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Tape:
    """Ordered record of primitive operations for one forward pass."""

    __slots__ = ("nodes", "consumed")

    def __init__(self):
        self.nodes: list = []
        self.consumed = False

    def __len__(self) -> int:
        return len(self.nodes)


def active_tape() -> Tape:
    tape = getattr(_local, "tape", None)
    if tape is None or tape.consumed:
        tape = Tape()
        _local.tape = tape
    return tape


def grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording anything on the tape."""
    prev = grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = prev


@contextlib.contextmanager
def inject_fault(op: str, factor: float = 1.01):
    """Scale the gradient rule of primitive ``op`` (fault-injection builds only)."""
    faults = dict(getattr(_local, "faults", {}))
    faults[op] = factor
    prev = getattr(_local, "faults", {})
    _local.faults = faults
    try:
        yield
    finally:
        _local.faults = prev


class Tensor:
    """Dense row-major float64 array that may take part in the tape."""

    __slots__ = ("data", "requires_grad", "grad", "_tape", "__weakref__")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._tape = None

    @classmethod
    def _wrap(cls, arr: np.ndarray, tape) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = tape is not None
        t.grad = None
        t._tape = tape
        return t

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._tape is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data, None)

    def zero_grad(self) -> None:
        self.grad = None

    # operators
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def swapaxes(self, a, b):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return transpose(self, tuple(axes))

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def backward(self):
        return backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor._wrap(np.asarray(x, dtype=np.float64), None)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def _result(arr: np.ndarray, inputs: tuple, rule, name: str) -> Tensor:
    if grad_enabled() and any(t.requires_grad for t in inputs):
        tape = active_tape()
        for t in inputs:
            if t._tape is not None and t._tape is not tape:
                raise TapeError(f"{name}: input was produced on a consumed tape; rerun the forward pass")
        out = Tensor._wrap(arr, tape)
        tape.nodes.append((out, inputs, rule, name))
        return out
    return Tensor._wrap(arr, None)


def backward(loss: Tensor) -> dict:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` and consume the tape.

    Returns:
        Mapping from each reached leaf tensor to the gradient added by this pass.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not np.all(np.isfinite(loss.data)):
        raise NumericalFault(f"non-finite loss {loss.data!r}")
    tape = loss._tape
    if tape is None:
        if loss.requires_grad:
            g = np.ones_like(loss.data)
            loss.grad = g if loss.grad is None else loss.grad + g
            return {loss: g}
        raise TapeError("loss is not connected to a live tape")
    if tape.consumed:
        raise TapeError("tape already consumed; run a new forward pass before backward")
    tape.consumed = True
    faults = getattr(_local, "faults", {})
    grads = {id(loss): np.ones_like(loss.data)}
    leaves: dict = {}
    for out, inputs, rule, name in reversed(tape.nodes):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        in_grads = rule(g)
        if name in faults:
            in_grads = tuple(None if gi is None else gi * faults[name] for gi in in_grads)
        for t, gi in zip(inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if t._tape is None:
                prev = leaves.get(key)
                leaves[key] = (t, np.array(gi, dtype=np.float64) if prev is None else prev[1] + gi)
            else:
                prev = grads.get(key)
                grads[key] = gi if prev is None else prev + gi
    tape.nodes.clear()
    if getattr(_local, "tape", None) is tape:
        _local.tape = None
    result = {}
    for t, g in leaves.values():
        t.grad = g if t.grad is None else t.grad + g
        result[t] = g
    return result


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def canonical_sum(a: np.ndarray, axis: int = -1, keepdims: bool = False) -> np.ndarray:
    """Order-independent sum: sort, then add sequentially.

    Permuting the summands, or inserting exact zeros, cannot change the result.
    """
    s = np.cumsum(np.sort(a, axis=axis), axis=axis)
    out = np.take(s, -1, axis=axis)
    return np.expand_dims(out, axis) if keepdims else out


def rowwise_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``a @ b`` for a 2-D ``b``, one vector-matrix product per row of ``a``."""
    if a.ndim == 1:
        return np.matmul(a[None, :], b)[0]
    return np.matmul(a[..., None, :], b)[..., 0, :]


# elementwise ----------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _result(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _result(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _result(
        ad * bd, (a, b), lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)), "mul"
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd

    def rule(g):
        ga = g / bd
        return _unbroadcast(ga, ad.shape), _unbroadcast(-ga * out, bd.shape)

    return _result(out, (a, b), rule, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _result(ad**p, (a,), lambda g: (g * p * ad ** (p - 1),), "power")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _result(np.log(ad), (a,), lambda g: (g / ad,), "log")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _result(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = special.expit(a.data)
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def softplus(a) -> Tensor:
    """log(1 + e^x), stable for large |x|."""
    a = as_tensor(a)
    ad = a.data
    return _result(np.logaddexp(0.0, ad), (a,), lambda g: (g * special.expit(ad),), "softplus")


def gelu(a) -> Tensor:
    """Exact GELU, x * Phi(x)."""
    a = as_tensor(a)
    ad = a.data
    cdf = 0.5 * (1.0 + special.erf(ad * _SQRT_HALF))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * ad * ad)
    return _result(ad * cdf, (a,), lambda g: (g * (cdf + ad * pdf),), "gelu")


def clamp_min(a, low: float) -> Tensor:
    a = as_tensor(a)
    keep = a.data >= low
    return _result(np.maximum(a.data, low), (a,), lambda g: (g * keep,), "clamp_min")


# shape ----------------------------------------------------------------------


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def rule(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _result(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), rule, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return tsum(a, axis, keepdims) * (1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    orig = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(orig),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def _is_basic(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, slice, type(None), type(Ellipsis))) for i in items)


def index(a, idx) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    basic = _is_basic(idx)

    def rule(g):
        z = np.zeros(shape)
        if basic:
            z[idx] = g
        else:
            np.add.at(z, idx, g)
        return (z,)

    return _result(a.data[idx], (a,), rule, "index")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _result(
        np.concatenate([t.data for t in tensors], axis=axis),
        tensors,
        lambda g: tuple(np.split(g, sizes, axis=axis)),
        "concat",
    )


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    n = len(tensors)

    def rule(g):
        return tuple(np.take(g, i, axis=axis) for i in range(n))

    return _result(np.stack([t.data for t in tensors], axis=axis), tensors, rule, "stack")


def pad2d(a, pads: tuple) -> Tensor:
    """Zero-pad the last two axes by ``(top, bottom, left, right)``."""
    a = as_tensor(a)
    top, bottom, left, right = pads
    width = [(0, 0)] * (a.ndim - 2) + [(top, bottom), (left, right)]
    h, w = a.shape[-2:]
    return _result(
        np.pad(a.data, width), (a,), lambda g: (g[..., top : top + h, left : left + w],), "pad2d"
    )


# products -------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes, with batch broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    if bd.ndim == 2:
        out = rowwise_matmul(ad, bd)
    else:
        out = np.sum(ad[..., :, None, :] * np.swapaxes(bd, -1, -2)[..., None, :, :], axis=-1)

    def rule(g):
        if bd.ndim == 2:
            ga = g @ bd.T
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            return ga, gb
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _result(out, (a, b), rule, "matmul")


def weighted_sum(w, v) -> Tensor:
    """``w @ v`` where each output is an order-independent sum over the key axis.

    ``w`` is ``[..., Lq, Lk]`` (attention weights), ``v`` is ``[..., Lk, dv]``.
    """
    w, v = as_tensor(w), as_tensor(v)
    if w.shape[-1] != v.shape[-2]:
        raise ShapeError(f"weighted_sum shape mismatch: {w.shape} and {v.shape}")
    wd, vd = w.data, v.data
    out = canonical_sum(wd[..., :, :, None] * vd[..., None, :, :], axis=-2)

    def rule(g):
        gw = g @ np.swapaxes(vd, -1, -2)
        gv = np.swapaxes(wd, -1, -2) @ g
        return _unbroadcast(gw, wd.shape), _unbroadcast(gv, vd.shape)

    return _result(out, (w, v), rule, "weighted_sum")


# normalisation --------------------------------------------------------------


def softmax(x, mask=None, axis: int = -1) -> Tensor:
    """Softmax with max subtraction; masked-out positions are exactly zero.

    Args:
        x: logits.
        mask: optional boolean array broadcastable to ``x``; True marks positions kept.
    """
    x = as_tensor(x)
    z = x.data
    if mask is not None:
        keep = np.broadcast_to(np.asarray(mask, dtype=bool), z.shape)
        if not np.all(np.any(keep, axis=axis)):
            raise ShapeError("softmax: a row has every position masked")
        z = np.where(keep, z, -np.inf)
    e = np.exp(z - np.max(z, axis=axis, keepdims=True))
    out = e / canonical_sum(e, axis=axis, keepdims=True)

    def rule(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _result(out, (x,), rule, "softmax")


def layernorm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean / unit variance, then scale and shift."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if d < 2:
        raise ShapeError(f"layernorm needs a last axis of size >= 2, got {x.shape}")
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layernorm affine shapes {gain.shape}, {bias.shape} do not match {d}")
    xd = x.data
    mu = np.mean(xd, axis=-1, keepdims=True)
    xc = xd - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data
    out = xhat * gd + bias.data

    def rule(g):
        dxhat = g * gd
        dx = inv * (
            dxhat - np.mean(dxhat, axis=-1, keepdims=True) - xhat * np.mean(dxhat * xhat, axis=-1, keepdims=True)
        )
        flat_g = g.reshape(-1, d)
        return dx, np.sum(flat_g * xhat.reshape(-1, d), axis=0), np.sum(flat_g, axis=0)

    return _result(out, (x, gain, bias), rule, "layernorm")


# convolution ----------------------------------------------------------------


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    span = size + 2 * padding - kernel
    if span < 0 or span % stride:
        raise ConfigError(
            f"conv2d: ({size} + 2*{padding} - {kernel}) / {stride} + 1 is not a positive integer"
        )
    return span // stride + 1


def conv2d(x, kernel, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation.

    Args:
        x: ``[C_in, H, W]`` or ``[B, C_in, H, W]``.
        kernel: ``[C_out, C_in, kh, kw]``.
        bias: optional ``[C_out]``.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or kernel.ndim != 4 or kernel.shape[1] != xd.shape[1]:
        raise ShapeError(f"conv2d shape mismatch: input {x.shape}, kernel {kernel.shape}")
    bsz, c_in, h, w = xd.shape
    c_out, _, kh, kw = kernel.shape
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride][:, :, :ho, :wo]  # B, C, ho, wo, kh, kw
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(bsz * ho * wo, c_in * kh * kw)
    wmat = kernel.data.reshape(c_out, -1)
    out = rowwise_matmul(cols, wmat.T).reshape(bsz, ho, wo, c_out).transpose(0, 3, 1, 2)
    inputs = (x, kernel)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (c_out,):
            raise ShapeError(f"conv2d bias shape {bias.shape}, expected ({c_out},)")
        out = out + bias.data[None, :, None, None]
        inputs = (x, kernel, bias)
    if squeeze:
        out = out[0]

    def rule(g):
        g4 = g[None] if squeeze else g
        gflat = g4.transpose(0, 2, 3, 1).reshape(-1, c_out)
        gk = (gflat.T @ cols).reshape(kernel.shape)
        dcols = (gflat @ wmat).reshape(bsz, ho, wo, c_in, kh, kw)
        gxp = np.zeros(xp.shape)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[
                    :, :, :, :, i, j
                ].transpose(0, 3, 1, 2)
        gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
        if squeeze:
            gx = gx[0]
        grads = (gx, gk)
        if bias is not None:
            grads = grads + (g4.sum(axis=(0, 2, 3)),)
        return grads

    return _result(np.ascontiguousarray(out), inputs, rule, "conv2d")


def ordered_sum(a, axis=None) -> Tensor:
    """Sum whose value is independent of the order of the summands (see :func:`canonical_sum`)."""
    a = as_tensor(a)
    shape = a.shape
    if axis is None:
        out = np.asarray(canonical_sum(a.data.reshape(-1), axis=0))

        def rule(g):
            return (np.broadcast_to(g, shape),)

    else:
        out = canonical_sum(a.data, axis=axis)

        def rule(g):
            return (np.broadcast_to(np.expand_dims(g, axis), shape),)

    return _result(out, (a,), rule, "ordered_sum")
