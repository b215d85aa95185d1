"""Dense-tensor reverse-mode automatic differentiation.

A `Tensor` wraps a numpy array and records a closure-based backward graph.
Only the operations needed by the pipeline are provided: elementwise
arithmetic, matmul, reductions, 1-D convolution, ReLU, pooling, flatten,
L2 row normalization, gradient reversal, and softmax cross-entropy.
Broadcasting follows numpy; gradients are summed back to parent shapes.
"""
from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import GraphStateError, InputError, ShapeError


class Tensor:
    """Node in a reverse-mode autodiff graph.

    data is any-dimensional; dtype is whatever numpy array is handed in
    (float64 in tests, float32 allowed in training loops). `grad` is
    allocated lazily and always matches `data`'s shape.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_backward", "_parents", "_done")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=np.float64 if not isinstance(data, np.ndarray) else None)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._backward: Callable[[], None] = _noop
        self._parents: tuple[Tensor, ...] = ()
        self._done = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        nm = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{flag}{nm})"

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def item(self) -> float:
        return float(self.data)

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def reset_graph(self) -> None:
        """Allow another backward() call on this node."""
        self._done = False

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Populate .grad on every requires_grad ancestor.

        Raises GraphStateError when called twice on the same node without
        reset_graph(): a second pass would silently double-count gradients.
        """
        if self._done:
            raise GraphStateError(
                "backward() called twice on the same graph without reset_graph()"
            )
        if grad is None:
            if self.data.size != 1:
                raise InputError("backward() without an explicit gradient needs a scalar output")
            grad = np.ones_like(self.data)

        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        # Interior grads are scratch space for this pass; leaves (parameters)
        # keep accumulating until an explicit zero_grad().
        for node in topo:
            if node._parents:
                node.grad = None

        self.accumulate(np.asarray(grad, dtype=self.data.dtype))
        for node in reversed(topo):
            if node.grad is not None:
                node._backward()
        self._done = True

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self):
        return transpose(self)

    @property
    def T(self):
        return transpose(self)


def _noop() -> None:
    return None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, (gs, ts) in enumerate(zip(g.shape, shape)):
        if ts == 1 and gs != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable[[], None]) -> Tensor:
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    return out


# -- elementwise ---------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def backward():
        g = out.grad
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.shape))

    out = _make(out_data, (a, b), backward)
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def backward():
        g = out.grad
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.data, b.shape))

    out = _make(out_data, (a, b), backward)
    return out


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data / b.data

    def backward():
        g = out.grad
        if a.requires_grad:
            a.accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    out = _make(out_data, (a, b), backward)
    return out


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    out_data = a.data ** p

    def backward():
        if a.requires_grad:
            a.accumulate(out.grad * (p * a.data ** (p - 1)))

    out = _make(out_data, (a,), backward)
    return out


def exp(a) -> Tensor:
    a = as_tensor(a)
    e = np.exp(a.data)

    def backward():
        if a.requires_grad:
            a.accumulate(out.grad * e)

    out = _make(e, (a,), backward)
    return out


def log(a) -> Tensor:
    a = as_tensor(a)

    def backward():
        if a.requires_grad:
            a.accumulate(out.grad / a.data)

    out = _make(np.log(a.data), (a,), backward)
    return out


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0

    def backward():
        if a.requires_grad:
            a.accumulate(out.grad * mask)

    out = _make(np.maximum(a.data, 0), (a,), backward)
    return out


# -- shaping / reductions -------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)

    def backward():
        if a.requires_grad:
            a.accumulate(out.grad.reshape(a.shape))

    out = _make(a.data.reshape(shape), (a,), backward)
    return out


def transpose(a) -> Tensor:
    a = as_tensor(a)

    def backward():
        if a.requires_grad:
            a.accumulate(out.grad.T)

    out = _make(a.data.T, (a,), backward)
    return out


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)

    def backward():
        if a.requires_grad:
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis=axis)
            a.accumulate(np.broadcast_to(g, a.shape).copy())

    out = _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)
    return out


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def backward():
        g = out.grad
        if a.requires_grad:
            a.accumulate(g @ b.data.T)
        if b.requires_grad:
            b.accumulate(a.data.T @ g)

    out = _make(out_data, (a, b), backward)
    return out


# -- network layers --------------------------------------------------------

def conv1d(x, w, b=None, stride: int = 1, padding: int = 0, layer_name: str = "conv1d") -> Tensor:
    """Cross-correlate x (N, C_in, L) with w (C_out, C_in, K), plus bias.

    Output length floor((L + 2*padding - K)/stride) + 1 must be >= 1.
    Implemented as an im2col matmul so BLAS carries the bulk of the work.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.data.ndim != 3 or w.data.ndim != 3:
        raise ShapeError(f"{layer_name}: expected x (N,C,L) and w (C_out,C_in,K), "
                         f"got {x.shape} and {w.shape}")
    n, c_in, length = x.shape
    c_out, c_in_w, k = w.shape
    if c_in != c_in_w:
        raise ShapeError(f"{layer_name}: input has {c_in} channels, kernel expects {c_in_w}")
    l_pad = length + 2 * padding
    l_out = (l_pad - k) // stride + 1
    if l_out < 1:
        raise ShapeError(f"{layer_name}: output length {l_out} < 1 "
                         f"(L={length}, K={k}, stride={stride}, padding={padding})")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)[:, :, ::stride, :]
    cols = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(n * l_out, c_in * k)
    wm = w.data.reshape(c_out, c_in * k)
    out_data = (cols @ wm.T).reshape(n, l_out, c_out).transpose(0, 2, 1)
    if b is not None:
        b = as_tensor(b)
        out_data = out_data + b.data[None, :, None]
    parents = (x, w) if b is None else (x, w, b)

    def backward():
        g = out.grad  # (N, C_out, L_out)
        gm = np.ascontiguousarray(g.transpose(0, 2, 1)).reshape(n * l_out, c_out)
        if w.requires_grad:
            w.accumulate((gm.T @ cols).reshape(c_out, c_in, k))
        if b is not None and b.requires_grad:
            b.accumulate(g.sum(axis=(0, 2)))
        if x.requires_grad:
            gcols = (gm @ wm).reshape(n, l_out, c_in, k).transpose(0, 2, 1, 3)
            gxp = np.zeros((n, c_in, l_pad), dtype=x.data.dtype)
            for kk in range(k):
                gxp[:, :, kk:kk + stride * l_out:stride] += gcols[:, :, :, kk]
            x.accumulate(gxp[:, :, padding:l_pad - padding] if padding else gxp)

    out = _make(np.ascontiguousarray(out_data), parents, backward)
    return out


def linear(x, w, b=None, layer_name: str = "linear") -> Tensor:
    """x (N, F_in) times w (F_out, F_in) transposed, plus bias (F_out,)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.data.ndim != 2:
        raise ShapeError(f"{layer_name}: expected 2-D input, got {x.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"{layer_name}: input width {x.shape[1]} != weight fan-in {w.shape[1]}")
    out = matmul(x, transpose(w))
    if b is not None:
        out = add(out, b)
    return out


def global_avg_pool(x, layer_name: str = "global_avg_pool") -> Tensor:
    """(N, C, L) -> (N, C) by averaging over positions."""
    x = as_tensor(x)
    if x.data.ndim != 3:
        raise ShapeError(f"{layer_name}: expected (N,C,L), got {x.shape}")
    return tmean(x, axis=2)


def flatten(x, layer_name: str = "flatten") -> Tensor:
    """(N, ...) -> (N, prod(...))."""
    x = as_tensor(x)
    n = x.shape[0]
    return reshape(x, (n, int(np.prod(x.shape[1:]))))


def grad_reverse(x, lam: float) -> Tensor:
    """Identity forward; backward multiplies the upstream gradient by -lam."""
    x = as_tensor(x)
    if lam < 0:
        raise InputError(f"grad_reverse coefficient must be nonnegative, got {lam}")

    def backward():
        if x.requires_grad:
            x.accumulate(-lam * out.grad)

    out = _make(x.data, (x,), backward)
    return out


def l2_normalize(x, eps: float = 1e-12) -> Tensor:
    """Row-normalize (N, D) to unit L2 norm (fused op, exact gradient)."""
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"l2_normalize: expected 2-D input, got {x.shape}")
    norms = np.sqrt((x.data * x.data).sum(axis=1, keepdims=True))
    norms = np.maximum(norms, eps)
    y = x.data / norms

    def backward():
        if x.requires_grad:
            g = out.grad
            x.accumulate((g - y * (y * g).sum(axis=1, keepdims=True)) / norms)

    out = _make(y, (x,), backward)
    return out


def softmax(logits: np.ndarray) -> np.ndarray:
    """Plain numpy softmax over the last axis (no graph)."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits, labels) -> Tensor:
    """Mean of -log softmax(logits)[label] over the batch.

    Log-sum-exp stabilized, so saturated logits do not overflow. `labels`
    is an integer array, not part of the graph.
    """
    logits = as_tensor(logits)
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy: expected (N, classes) logits, got {logits.shape}")
    labels = np.asarray(labels)
    n, n_classes = logits.shape
    if labels.shape != (n,):
        raise InputError(f"cross_entropy: labels shape {labels.shape} != ({n},)")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise InputError(f"cross_entropy: labels must lie in [0, {n_classes})")
    z = logits.data
    m = z.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=1))
    picked = z[np.arange(n), labels]
    loss = float((lse - picked).mean())

    def backward():
        if logits.requires_grad:
            p = softmax(z)
            p[np.arange(n), labels] -= 1.0
            logits.accumulate((out.grad * p / n).astype(z.dtype))

    out = _make(np.asarray(loss, dtype=z.dtype), (logits,), backward)
    return out
