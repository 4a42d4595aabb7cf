"""Reverse-mode autodiff over dense numpy arrays.

Tensors record the operations that produced them; calling
:meth:`Tensor.backward` on a scalar result fills the ``grad`` field of every
reachable tensor created with ``requires_grad=True``. The op set is the
minimum needed by the point-set GAN: broadcast arithmetic, 2-D matmul,
reductions, gathers, concatenation and the usual activations.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

_DEFAULT_DTYPE = np.dtype(np.float32)
_GRAD_ENABLED = True


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dtype}")
    _DEFAULT_DTYPE = dtype


def default_dtype() -> np.dtype:
    return _DEFAULT_DTYPE


@contextmanager
def using_dtype(dtype):
    """Temporarily switch the dtype new tensors are created with."""
    old = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(old)


@contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    old = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = old


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(_DEFAULT_DTYPE)
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward_fn = None

    # -- graph plumbing ----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        """Populate gradients of every tensor this scalar depends on."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward_fn is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._backward_fn(node.grad)):
                if not parent.requires_grad or g is None:
                    continue
                if parent.grad is None:
                    parent.grad = g  # may be a read-only view; never mutated
                else:
                    parent.grad = parent.grad + g
        # intermediate grads are not kept alive deliberately: free the graph
        for node in order:
            if node._backward_fn is not None:
                node._parents = ()
                node._backward_fn = None

    # -- arithmetic --------------------------------------------------------

    def __add__(self, other):
        other = _wrap(other)
        out_data = self.data + other.data

        def bwd(g):
            return (_unbroadcast(g, self.data.shape),
                    _unbroadcast(g, other.data.shape))

        return _node(out_data, (self, other), bwd)

    __radd__ = __add__

    def __mul__(self, other):
        other = _wrap(other)
        out_data = self.data * other.data

        def bwd(g):
            return (_unbroadcast(g * other.data, self.data.shape),
                    _unbroadcast(g * self.data, other.data.shape))

        return _node(out_data, (self, other), bwd)

    __rmul__ = __mul__

    def __neg__(self):
        return _node(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        other = _wrap(other)
        out_data = self.data - other.data

        def bwd(g):
            return (_unbroadcast(g, self.data.shape),
                    _unbroadcast(-g, other.data.shape))

        return _node(out_data, (self, other), bwd)

    def __rsub__(self, other):
        return _wrap(other).__sub__(self)

    def __truediv__(self, other):
        other = _wrap(other)
        out_data = self.data / other.data

        def bwd(g):
            ga = _unbroadcast(g / other.data, self.data.shape)
            gb = _unbroadcast(-g * self.data / (other.data ** 2),
                              other.data.shape)
            return ga, gb

        return _node(out_data, (self, other), bwd)

    def __pow__(self, exponent: float):
        if not np.isscalar(exponent):
            raise TypeError("only scalar exponents are supported")
        out_data = self.data ** exponent

        def bwd(g):
            return (g * exponent * self.data ** (exponent - 1),)

        return _node(out_data, (self,), bwd)

    def matmul(self, other: "Tensor") -> "Tensor":
        other = _wrap(other)
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise ValueError("matmul expects 2-D operands")
        out_data = self.data @ other.data

        def bwd(g):
            return g @ other.data.T, self.data.T @ g

        return _node(out_data, (self, other), bwd)

    __matmul__ = matmul

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def bwd(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, self.data.shape),)

        return _node(out_data, (self,), bwd)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def max(self, axis: int, keepdims: bool = False):
        """Max along one axis; ties route the gradient to the lowest index."""
        idx = np.argmax(self.data, axis=axis)
        out_data = np.take_along_axis(
            self.data, np.expand_dims(idx, axis), axis=axis)
        if not keepdims:
            out_data = np.squeeze(out_data, axis=axis)

        def bwd(g):
            if not keepdims:
                g = np.expand_dims(g, axis)
            full = np.zeros_like(self.data)
            np.put_along_axis(full, np.expand_dims(idx, axis), g, axis=axis)
            return (full,)

        return _node(out_data, (self,), bwd)

    # -- elementwise ---------------------------------------------------------

    def relu(self):
        mask = self.data > 0
        return _node(np.where(mask, self.data, 0.0), (self,),
                     lambda g: (g * mask,))

    def leaky_relu(self, slope: float = 0.2):
        mask = self.data > 0
        scale = np.where(mask, 1.0, slope)
        return _node(self.data * scale, (self,), lambda g: (g * scale,))

    def exp(self):
        out_data = np.exp(self.data)
        return _node(out_data, (self,), lambda g: (g * out_data,))

    def log(self):
        return _node(np.log(self.data), (self,), lambda g: (g / self.data,))

    def sqrt(self):
        out_data = np.sqrt(self.data)
        return _node(out_data, (self,), lambda g: (g * 0.5 / out_data,))

    def clip(self, lo: float, hi: float):
        """Clamp values; entries strictly outside [lo, hi] get zero grad."""
        mask = (self.data >= lo) & (self.data <= hi)
        return _node(np.clip(self.data, lo, hi), (self,),
                     lambda g: (g * mask,))

    def tanh(self):
        """Hyperbolic tangent, the smooth squash onto (-1, 1)."""
        t = np.tanh(self.data)
        return _node(t, (self,), lambda g: (g * (1.0 - t * t),))

    def reflect(self, lo: float, hi: float):
        """Fold values into [lo, hi] by reflecting at the bounds.

        Identity inside the interval; values past a bound bounce back in
        (triangle wave). Unlike a hard or tanh clamp the gradient magnitude
        is 1 almost everywhere, so out-of-range values are never trapped.
        """
        period = 2.0 * (hi - lo)
        t = np.mod(self.data - lo, period)
        half = 0.5 * period
        out = lo + half - np.abs(t - half)
        return _node(out, (self,), lambda g: (g * -np.sign(t - half),))

    def softmax(self, axis: int = -1):
        """Numerically stable softmax along ``axis`` (max subtraction)."""
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        s = e / e.sum(axis=axis, keepdims=True)

        def bwd(g):
            dot = (g * s).sum(axis=axis, keepdims=True)
            return (s * (g - dot),)

        return _node(s, (self,), bwd)

    # -- shape ops -----------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old_shape = self.data.shape
        return _node(self.data.reshape(shape), (self,),
                     lambda g: (g.reshape(old_shape),))

    def slice_last(self, start: int, stop: int):
        """Slice the last axis; the classic split-columns op."""
        out_data = self.data[..., start:stop]

        def bwd(g):
            full = np.zeros_like(self.data)
            full[..., start:stop] = g
            return (full,)

        return _node(out_data, (self,), bwd)


def _wrap(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _node(data, parents, backward_fn) -> Tensor:
    record = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor(data)
    if record:
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


# -- free functions ----------------------------------------------------------


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    extents = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(extents)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(out_data, tuple(tensors), bwd)


def gather_axis1(t: Tensor, index: np.ndarray) -> Tensor:
    """Per-batch gather: t is [B, N, C], index is [B, ...] of ints.

    Returns [B, ..., C]; gradients scatter-add back to the source rows, so
    repeated indices accumulate.
    """
    index = np.asarray(index)
    if t.data.ndim != 3 or index.ndim < 2 or index.shape[0] != t.data.shape[0]:
        raise ValueError("gather_axis1 expects t [B,N,C] and index [B,...]")
    b = t.data.shape[0]
    batch_ix = np.arange(b).reshape((b,) + (1,) * (index.ndim - 1))
    batch_ix = np.broadcast_to(batch_ix, index.shape)
    out_data = t.data[batch_ix, index]

    def bwd(g):
        full = np.zeros_like(t.data)
        np.add.at(full, (batch_ix, index), g)
        return (full,)

    return _node(out_data, (t,), bwd)


def gather_scenes(t: Tensor, rows: np.ndarray, index: np.ndarray) -> Tensor:
    """Gather out[i, ...] = t[rows[i], index[i, ...]] from a [B, N, C] tensor."""
    rows = np.asarray(rows)
    index = np.asarray(index)
    if t.data.ndim != 3 or rows.ndim != 1 or index.shape[0] != rows.shape[0]:
        raise ValueError("gather_scenes expects t [B,N,C], rows [R], index [R,...]")
    row_ix = rows.reshape((rows.shape[0],) + (1,) * (index.ndim - 1))
    row_ix = np.broadcast_to(row_ix, index.shape)
    out_data = t.data[row_ix, index]

    def bwd(g):
        full = np.zeros_like(t.data)
        np.add.at(full, (row_ix, index), g)
        return (full,)

    return _node(out_data, (t,), bwd)


def select_classes(probs: Tensor, labels: np.ndarray) -> Tensor:
    """Pick probs[i, labels[i]] for each row; returns a [N] tensor."""
    labels = np.asarray(labels)
    if probs.data.ndim != 2 or labels.ndim != 1 \
            or labels.shape[0] != probs.data.shape[0]:
        raise ValueError("select_classes expects probs [N,C] and labels [N]")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= probs.data.shape[1]:
        raise ValueError("label index out of range")
    rows = np.arange(probs.data.shape[0])
    out_data = probs.data[rows, labels]

    def bwd(g):
        full = np.zeros_like(probs.data)
        full[rows, labels] = g
        return (full,)

    return _node(out_data, (probs,), bwd)
