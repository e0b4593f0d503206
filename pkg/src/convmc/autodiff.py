"""Dense float64 tensors with reverse-mode automatic differentiation.

The engine is deliberately small: 2-D matrices (plus 0-d scalars produced by
reductions), define-by-run graphs rebuilt on every forward pass, and closures
for the backward step. Every op validates its output for NaN/Inf so numerical
trouble surfaces at the op that produced it instead of three layers later.
"""
from __future__ import annotations

import contextlib
import contextvars
import math
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "NonFiniteError",
    "GraphError",
    "no_grad",
    "matmul",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "tanh",
    "sigmoid",
    "gelu",
    "log",
    "sqrt",
    "softmax",
    "concat_rows",
    "concat_cols",
    "gather_rows",
    "select_columns",
    "transpose",
    "tsum",
    "mean",
    "dropout",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class NonFiniteError(ArithmeticError):
    """An op produced NaN or Inf."""


class GraphError(RuntimeError):
    """Misuse of the recorded graph (non-scalar backward, double backward)."""


# Thread- and async-safe switch for graph recording; inference runs with
# recording off so no tape is built.
_GRAD_ENABLED: contextvars.ContextVar[bool] = contextvars.ContextVar(
    "convmc_grad_enabled", default=True
)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference mode)."""
    token = _GRAD_ENABLED.set(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.reset(token)


class Tensor:
    """A float64 array plus an optional gradient buffer.

    Tensors created by ops keep references to their inputs and a closure that
    propagates the output gradient to them; `backward()` on a scalar walks
    those references once, in reverse execution order.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backprop", "_done")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backprop: Callable[[np.ndarray], None] | None = None
        self._done = False

    # -- introspection ---------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- graph control ---------------------------------------------------

    def detach(self) -> "Tensor":
        """A view of the same values, cut out of the graph."""
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if not (self.requires_grad or self._parents):
            return
        if self.grad is None:
            self.grad = g.astype(np.float64, copy=True)
        else:
            self.grad = self.grad + g

    def backward(self) -> None:
        """Populate `.grad` on every tensor that contributed to this scalar.

        May be called once per recorded graph; call the forward pass again
        before the next backward.
        """
        if self.data.size != 1:
            raise GraphError(f"backward requires a scalar loss, got shape {self.shape}")
        if self._done:
            raise GraphError("backward already ran on this graph; rebuild the forward pass")
        if self._backprop is None and not self.requires_grad:
            raise GraphError("backward on a tensor with no recorded graph")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                if id(parent) not in seen:
                    stack.append((parent, False))

        self._accumulate(np.ones_like(self.data))
        if self.grad is None:  # loss itself is a plain constant leaf
            self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backprop is not None and node.grad is not None:
                node._backprop(node.grad)
        self._done = True

    # -- operator sugar ----------------------------------------------------

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

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values produced by {op}")


def _node(
    data: np.ndarray,
    parents: Sequence[Tensor],
    backprop: Callable[[np.ndarray], None],
    op: str,
) -> Tensor:
    _check_finite(data, op)
    out = Tensor(data)
    if _GRAD_ENABLED.get() and any(p.requires_grad or p._parents for p in parents):
        out._parents = tuple(parents)
        out._backprop = backprop
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- binary elementwise --------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data

    def backprop(g):
        a._accumulate(_unbroadcast(g, a.data.shape))
        b._accumulate(_unbroadcast(g, b.data.shape))

    return _node(out, (a, b), backprop, "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data - b.data

    def backprop(g):
        a._accumulate(_unbroadcast(g, a.data.shape))
        b._accumulate(_unbroadcast(-g, b.data.shape))

    return _node(out, (a, b), backprop, "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data

    def backprop(g):
        a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _node(out, (a, b), backprop, "mul")


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data / b.data

    def backprop(g):
        a._accumulate(_unbroadcast(g / b.data, a.data.shape))
        b._accumulate(_unbroadcast(-g * out / b.data, b.data.shape))

    return _node(out, (a, b), backprop, "div")


def neg(x) -> Tensor:
    x = _as_tensor(x)

    def backprop(g):
        x._accumulate(-g)

    return _node(-x.data, (x,), backprop, "neg")


# -- matrix ops ------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data

    def backprop(g):
        a._accumulate(g @ b.data.T)
        b._accumulate(a.data.T @ g)

    return _node(out, (a, b), backprop, "matmul")


def transpose(x) -> Tensor:
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {x.data.shape}")

    def backprop(g):
        x._accumulate(g.T)

    return _node(x.data.T.copy(), (x,), backprop, "transpose")


# -- nonlinearities ----------------------------------------------------------

_GELU_C = math.sqrt(2.0 / math.pi)


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    out = np.tanh(x.data)

    def backprop(g):
        x._accumulate(g * (1.0 - out * out))

    return _node(out, (x,), backprop, "tanh")


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    # Piecewise form avoids overflow in exp for large |x|.
    out = np.where(
        x.data >= 0,
        1.0 / (1.0 + np.exp(-np.abs(x.data))),
        np.exp(-np.abs(x.data)) / (1.0 + np.exp(-np.abs(x.data))),
    )

    def backprop(g):
        x._accumulate(g * out * (1.0 - out))

    return _node(out, (x,), backprop, "sigmoid")


def gelu(x) -> Tensor:
    """Gaussian error linear unit, tanh approximation:

        0.5 * x * (1 + tanh(sqrt(2/pi) * (x + 0.044715 * x^3)))
    """
    x = _as_tensor(x)
    v = x.data
    inner = _GELU_C * (v + 0.044715 * v**3)
    t = np.tanh(inner)
    out = 0.5 * v * (1.0 + t)

    def backprop(g):
        sech2 = 1.0 - t * t
        d = 0.5 * (1.0 + t) + 0.5 * v * sech2 * _GELU_C * (1.0 + 3 * 0.044715 * v * v)
        x._accumulate(g * d)

    return _node(out, (x,), backprop, "gelu")


def log(x) -> Tensor:
    x = _as_tensor(x)
    if np.any(x.data <= 0):
        raise ValueError("log domain error: input has non-positive entries")
    out = np.log(x.data)

    def backprop(g):
        x._accumulate(g / x.data)

    return _node(out, (x,), backprop, "log")


def sqrt(x) -> Tensor:
    x = _as_tensor(x)
    if np.any(x.data < 0):
        raise ValueError("sqrt domain error: input has negative entries")
    out = np.sqrt(x.data)

    def backprop(g):
        x._accumulate(g / (2.0 * out))

    return _node(out, (x,), backprop, "sqrt")


def softmax(x, axis: int) -> Tensor:
    """Numerically stable softmax along `axis` (max-subtraction)."""
    x = _as_tensor(x)
    if axis >= x.data.ndim or axis < -x.data.ndim:
        raise ShapeError(f"softmax axis {axis} invalid for shape {x.data.shape}")
    if x.data.shape[axis] == 0:
        raise ShapeError("softmax over an empty axis")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backprop(g):
        x._accumulate(out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return _node(out, (x,), backprop, "softmax")


# -- structural ops ----------------------------------------------------------


def _concat(parts: Sequence, axis: int, op: str) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError(f"{op} of an empty list")
    other = 1 - axis
    widths = {p.data.shape[other] for p in parts}
    if any(p.data.ndim != 2 for p in parts) or len(widths) != 1:
        raise ShapeError(f"{op}: incompatible shapes {[p.data.shape for p in parts]}")
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backprop(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            piece = g[lo:hi, :] if axis == 0 else g[:, lo:hi]
            p._accumulate(piece)

    return _node(out, parts, backprop, op)


def concat_rows(parts: Sequence) -> Tensor:
    """Stack matrices that share a column count, in argument order."""
    return _concat(parts, 0, "concat_rows")


def concat_cols(parts: Sequence) -> Tensor:
    return _concat(parts, 1, "concat_cols")


def gather_rows(table, ids) -> Tensor:
    """Copy rows `ids` out of a matrix; backward scatter-adds into the table."""
    table = _as_tensor(table)
    if table.data.ndim != 2:
        raise ShapeError(f"gather_rows expects a matrix, got shape {table.data.shape}")
    idx = np.asarray(ids, dtype=np.intp).reshape(-1)
    n = table.data.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        bad = idx[(idx < 0) | (idx >= n)][0]
        raise IndexError(f"row id {bad} out of range for table with {n} rows")
    out = table.data[idx].copy()

    def backprop(g):
        if not (table.requires_grad or table._parents):
            return
        buf = np.zeros_like(table.data)
        np.add.at(buf, idx, g)
        table._accumulate(buf)

    return _node(out, (table,), backprop, "gather_rows")


def select_columns(x, cols) -> Tensor:
    """Copy columns `cols` of a matrix, preserving the given order."""
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"select_columns expects a matrix, got shape {x.data.shape}")
    idx = np.asarray(cols, dtype=np.intp).reshape(-1)
    n = x.data.shape[1]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        bad = idx[(idx < 0) | (idx >= n)][0]
        raise IndexError(f"column id {bad} out of range for matrix with {n} columns")
    out = x.data[:, idx].copy()

    def backprop(g):
        if not (x.requires_grad or x._parents):
            return
        buf = np.zeros_like(x.data)
        np.add.at(buf.T, idx, g.T)
        x._accumulate(buf)

    return _node(out, (x,), backprop, "select_columns")


# -- reductions ---------------------------------------------------------------


def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backprop(g):
        if axis is None and not keepdims:
            x._accumulate(np.full_like(x.data, float(g)))
        else:
            ge = g if keepdims else np.expand_dims(g, axis)
            x._accumulate(np.broadcast_to(ge, x.data.shape).copy())

    return _node(out, (x,), backprop, "sum")


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    n = x.data.size if axis is None else x.data.shape[axis]
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / n)


# -- regularization -------------------------------------------------------------


def dropout(x, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when rate == 0."""
    x = _as_tensor(x)
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return x
    mask = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    out = x.data * mask

    def backprop(g):
        x._accumulate(g * mask)

    return _node(out, (x,), backprop, "dropout")
