"""Minimal reverse-mode autodiff over numpy arrays.

Provides exactly the operations the models need: elementwise arithmetic,
matmul, reshape/reductions, relu/sigmoid, 2-d convolution and transposed
convolution, batch normalization, a softmax cross-entropy head, and a
first-class stop-gradient node. Gradients are accumulated in reverse
topological order, deterministically, so training runs are bit-reproducible
for a fixed seed.
"""

from __future__ import annotations

import itertools

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Operand shapes do not conform."""


_ids = itertools.count()


class Tensor:
    """N-d array with optional gradient tracking.

    ``data`` is always a float32 or float64 numpy array. ``grad`` is lazily
    allocated by :func:`backward` and has the same shape as ``data``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "_id")

    def __init__(self, data, requires_grad=False, dtype=None, _parents=(), _backward=None, op="leaf"):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward
        self.op = op
        self._id = next(_ids)

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return stop_gradient(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other, like=self), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / other)
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def flatten(self):
        return flatten(self)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _accumulate(t: Tensor, g: np.ndarray):
    if t.grad is None:
        t.grad = g.astype(t.dtype, copy=True) if g.dtype != t.dtype else g.copy()
    else:
        t.grad += g


def _check_broadcastable(a: Tensor, b: Tensor, opname: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{opname}: shapes {a.shape} and {b.shape} do not conform") from None


def _make(data, parents, backward, op):
    req = any(p.requires_grad for p in parents)
    if not req:
        return Tensor(data, op=op)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=backward, op=op)


# ---------------------------------------------------------------------------
# elementwise and linear ops


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b, like=a)
    _check_broadcastable(a, b, "add")
    out_data = a.data + b.data

    def bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.shape))

    return _make(out_data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b, like=a)
    _check_broadcastable(a, b, "sub")
    out_data = a.data - b.data

    def bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g, b.shape))

    return _make(out_data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b, like=a)
    _check_broadcastable(a, b, "mul")
    out_data = a.data * b.data

    def bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(out_data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b, like=a)
    _check_broadcastable(a, b, "div")
    out_data = a.data / b.data

    def bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(out_data, (a, b), bw, "div")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out_data = a.data * a.dtype.type(c)

    def bw(g):
        _accumulate(a, g * a.dtype.type(c))

    return _make(out_data, (a,), bw, "scale")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    out_data = a.data @ b.data

    def bw(g):
        if a.requires_grad:
            _accumulate(a, g @ b.data.T)
        if b.requires_grad:
            _accumulate(b, a.data.T @ g)

    return _make(out_data, (a, b), bw, "matmul")


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out_data = a.data.reshape(shape)
    orig = a.shape

    def bw(g):
        _accumulate(a, g.reshape(orig))

    return _make(out_data, (a,), bw, "reshape")


def flatten(a: Tensor) -> Tensor:
    """Collapse everything but the leading (batch) axis."""
    return reshape(a, (a.shape[0], -1))


def tensor_sum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.shape))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(gg, a.shape))

    return _make(out_data, (a,), bw, "sum")


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out_data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else a.data.size // out_data.size

    def bw(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g / count, a.shape))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(gg / count, a.shape))

    return _make(out_data, (a,), bw, "mean")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    out_data = np.where(mask, a.data, a.dtype.type(0))

    def bw(g):
        _accumulate(a, g * mask)

    return _make(out_data, (a,), bw, "relu")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out_data = out_data.astype(a.dtype, copy=False)

    def bw(g):
        _accumulate(a, g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), bw, "sigmoid")


def sqrt(a: Tensor) -> Tensor:
    out_data = np.sqrt(a.data)

    def bw(g):
        _accumulate(a, g * 0.5 / out_data)

    return _make(out_data, (a,), bw, "sqrt")


def clamp_min(a: Tensor, value: float) -> Tensor:
    mask = a.data >= value
    out_data = np.maximum(a.data, a.dtype.type(value))

    def bw(g):
        _accumulate(a, g * mask)

    return _make(out_data, (a,), bw, "clamp_min")


def stop_gradient(a: Tensor) -> Tensor:
    """Identity forward, zero gradient contribution to the input."""
    return Tensor(a.data, op="stop_gradient")


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy of integer class labels."""
    labels = np.asarray(labels)
    if logits.data.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"softmax_cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    shifted = z - zmax
    lse = np.log(np.exp(shifted).sum(axis=1)) + zmax[:, 0]
    n = z.shape[0]
    picked = z[np.arange(n), labels]
    out_data = np.asarray((lse - picked).mean(), dtype=z.dtype)
    softmax = np.exp(shifted)
    softmax /= softmax.sum(axis=1, keepdims=True)

    def bw(g):
        grad = softmax.copy()
        grad[np.arange(n), labels] -= 1.0
        _accumulate(logits, grad * (g / n))

    return _make(out_data, (logits,), bw, "softmax_cross_entropy")


# ---------------------------------------------------------------------------
# convolution kernels (shared by conv2d, conv_transpose2d and their grads)


def _pad_hw(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _windows(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def _conv_forward(x: np.ndarray, w: np.ndarray, stride: int, padding: int) -> np.ndarray:
    xp = _pad_hw(x, padding)
    win = _windows(xp, w.shape[2], w.shape[3], stride)
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # (N, Ho, Wo, O)
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def _conv_grad_weight(x: np.ndarray, gy: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    xp = _pad_hw(x, padding)
    win = _windows(xp, kh, kw, stride)
    win = win[:, :, : gy.shape[2], : gy.shape[3]]
    return np.tensordot(gy, win, axes=([0, 2, 3], [0, 2, 3]))  # (O, C, kh, kw)


def _scatter_windows(src: np.ndarray, w: np.ndarray, out_hw: tuple, stride: int, padding: int) -> np.ndarray:
    """Adjoint of window extraction: out[n,b,i*s-pad+p, j*s-pad+q] += src[n,a,i,j] w[a,b,p,q]."""
    n, _, h, wd = src.shape
    _, b, kh, kw = w.shape
    canvas = np.zeros((n, b, (h - 1) * stride + kh, (wd - 1) * stride + kw), dtype=src.dtype)
    contrib = np.tensordot(src, w, axes=([1], [0]))  # (N, H, W, B, kh, kw)
    contrib = contrib.transpose(0, 3, 1, 2, 4, 5)
    for p in range(kh):
        for q in range(kw):
            canvas[:, :, p : p + stride * h : stride, q : q + stride * wd : stride] += contrib[..., p, q]
    out_h, out_w = out_hw
    out = np.zeros((n, b, out_h, out_w), dtype=src.dtype)
    ch = min(out_h, canvas.shape[2] - padding)
    cw = min(out_w, canvas.shape[3] - padding)
    out[:, :, :ch, :cw] = canvas[:, :, padding : padding + ch, padding : padding + cw]
    return out


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of NCHW input with (out, in, kh, kw) kernels."""
    if x.data.ndim != 4 or w.data.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} vs weight {w.shape} do not conform")
    if stride < 1:
        raise ValueError(f"conv2d: stride must be >= 1, got {stride}")
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    if h + 2 * padding < kh or wd + 2 * padding < kw:
        raise ShapeError(
            f"conv2d: kernel ({kh}, {kw}) larger than padded input ({h + 2 * padding}, {wd + 2 * padding})"
        )
    out_data = _conv_forward(x.data, w.data, stride, padding)

    def bw(g):
        if w.requires_grad:
            _accumulate(w, _conv_grad_weight(x.data, g, kh, kw, stride, padding))
        if x.requires_grad:
            _accumulate(x, _scatter_windows(g, w.data, (h, wd), stride, padding))

    return _make(out_data, (x, w), bw, "conv2d")


def conv_transpose2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0, output_padding: int = 0) -> Tensor:
    """Transposed convolution; weight layout (in, out, kh, kw).

    Output spatial size is (H - 1) * stride - 2 * padding + k + output_padding.
    For a fixed weight this is the exact adjoint of :func:`conv2d` with the
    same stride and padding.
    """
    if x.data.ndim != 4 or w.data.ndim != 4 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"conv_transpose2d: input {x.shape} vs weight {w.shape} do not conform")
    if stride < 1:
        raise ValueError(f"conv_transpose2d: stride must be >= 1, got {stride}")
    if output_padding >= stride:
        raise ValueError(f"conv_transpose2d: output_padding {output_padding} must be < stride {stride}")
    n, c, h, wd = x.shape
    _, o, kh, kw = w.shape
    out_h = (h - 1) * stride - 2 * padding + kh + output_padding
    out_w = (wd - 1) * stride - 2 * padding + kw + output_padding
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"conv_transpose2d: output size ({out_h}, {out_w}) is empty")
    out_data = _scatter_windows(x.data, w.data, (out_h, out_w), stride, padding)

    def bw(g):
        if w.requires_grad:
            _accumulate(w, _conv_grad_weight(g, x.data, kh, kw, stride, padding))
        if x.requires_grad:
            _accumulate(x, _conv_forward(g, w.data, stride, padding))

    return _make(out_data, (x, w), bw, "conv_transpose2d")


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-feature batch normalization over (B, F) or (N, C, H, W) input.

    Train mode normalizes with batch statistics and updates the running
    buffers in place via an exponential moving average; eval mode uses the
    running buffers. Gradients flow through the normalization.
    """
    if x.data.ndim == 2:
        axes, pshape = (0,), (1, -1)
    elif x.data.ndim == 4:
        axes, pshape = (0, 2, 3), (1, -1, 1, 1)
    else:
        raise ShapeError(f"batch_norm: expected 2-d or 4-d input, got {x.shape}")
    if training and x.shape[0] < 2:
        raise ShapeError(f"batch_norm: batch size {x.shape[0]} is degenerate in train mode")
    gb = gamma.data.reshape(pshape)
    bb = beta.data.reshape(pshape)
    if training:
        m = x.data.mean(axis=axes)
        v = x.data.var(axis=axes)
        count = x.data.size // m.size
        running_mean *= 1.0 - momentum
        running_mean += momentum * m
        running_var *= 1.0 - momentum
        running_var += momentum * v * (count / (count - 1))
    else:
        m = running_mean.astype(x.dtype, copy=False)
        v = running_var.astype(x.dtype, copy=False)
    inv_std = 1.0 / np.sqrt(v + x.dtype.type(eps))
    inv_b = inv_std.reshape(pshape)
    xhat = (x.data - m.reshape(pshape)) * inv_b
    out_data = gb * xhat + bb

    def bw(g):
        if gamma.requires_grad:
            _accumulate(gamma, (g * xhat).sum(axis=axes))
        if beta.requires_grad:
            _accumulate(beta, g.sum(axis=axes))
        if x.requires_grad:
            if training:
                dxhat = g * gb
                mean_dxhat = dxhat.mean(axis=axes, keepdims=True)
                mean_dxhat_xhat = (dxhat * xhat).mean(axis=axes, keepdims=True)
                _accumulate(x, inv_b * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat))
            else:
                _accumulate(x, g * gb * inv_b)

    return _make(out_data, (x, gamma, beta), bw, "batch_norm")


# ---------------------------------------------------------------------------
# backward pass and gradient checking


def backward(loss: Tensor):
    """Populate ``grad`` on every reachable tensor with d(loss)/d(tensor)."""
    if loss.data.size != 1:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    topo: list[Tensor] = []
    seen = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    _accumulate(loss, np.ones_like(loss.data))
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def grad_check(f, x: Tensor, h: float = 1e-5) -> float:
    """Max relative error between analytic gradient of ``f`` and central differences.

    ``f`` maps a tensor to a scalar tensor and must be evaluable in float64.
    The relative error denominator is max(|analytic|, |numeric|, 1e-12).
    """
    if h <= 0:
        raise ValueError(f"grad_check: h must be positive, got {h}")
    x.grad = None
    out = f(x)
    if out.data.size != 1:
        raise ValueError(f"grad_check expects a scalar-valued f, got shape {out.shape}")
    backward(out)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    worst = 0.0
    flat = x.data.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x).data)
        flat[i] = orig - h
        fm = float(f(x).data)
        flat[i] = orig
        numeric = (fp - fm) / (2.0 * h)
        a = float(analytic.reshape(-1)[i])
        if not (np.isfinite(numeric) and np.isfinite(a)):
            raise FloatingPointError(f"grad_check: non-finite value at coordinate {i}: analytic={a}, numeric={numeric}")
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-12)
        worst = max(worst, err)
    return worst
