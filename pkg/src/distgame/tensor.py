"""Dense float64 tensors with a reverse-mode gradient tape.

Every op returns a new :class:`Tensor` and, when any input requires a
gradient, records a node holding its inputs and a local gradient rule.
The nodes reachable from a scalar loss form the :class:`ComputationTape`
that :func:`backward` replays in reverse topological order.

Layout is row-major (numpy C order). There is no broadcasting: binary
elementwise ops require identical shapes, and scalars enter only through
:func:`scale` and :func:`shift`.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "ContractError",
    "ComputationTape",
    "no_grad",
    "grad_enabled",
    "matmul",
    "bmm",
    "add",
    "sub",
    "mul",
    "neg",
    "scale",
    "shift",
    "tanh_elem",
    "exp_elem",
    "log_elem",
    "softmax_rows",
    "reshape",
    "transpose",
    "sum_all",
    "sum_axis",
    "mean_all",
    "concat",
    "concat_cols",
    "slice_cols",
    "gather_rows",
    "clip",
    "minimum",
    "backward",
    "finite_diff_grad",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible with the op."""


class ContractError(RuntimeError):
    """An op was called outside its documented preconditions."""


_mode = threading.local()


def grad_enabled() -> bool:
    return getattr(_mode, "enabled", True)


@contextmanager
def no_grad():
    """Disable tape recording in the current thread."""
    prev = grad_enabled()
    _mode.enabled = False
    try:
        yield
    finally:
        _mode.enabled = prev


class _Node:
    __slots__ = ("op", "inputs", "rule")

    def __init__(self, op: str, inputs: tuple, rule: Callable):
        self.op = op
        self.inputs = inputs
        self.rule = rule


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_node")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._node: _Node | None = None

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.grad = None
        t.requires_grad = False
        t.name = None
        t._node = None
        return t

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
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={list(self.shape)}{flag})"

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return shift(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return shift(self, -other)

    def __rsub__(self, other):
        return shift(neg(self), other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __truediv__(self, c):
        return scale(self, 1.0 / c)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        if self.ndim == 3:
            return bmm(self, other)
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out: np.ndarray, op: str, inputs: tuple, rule: Callable) -> Tensor:
    t = Tensor._wrap(out)
    if grad_enabled() and any(inp.requires_grad for inp in inputs):
        t.requires_grad = True
        t._node = _Node(op, inputs, rule)
    return t


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {list(a.shape)} and {list(b.shape)} differ")


# -- linear algebra ---------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {list(a.shape)} by {list(b.shape)}")
    ad, bd = a.data, b.data

    def rule(g):
        return g @ bd.T, ad.T @ g

    return _record(ad @ bd, "matmul", (a, b), rule)


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched matmul over a shared leading dimension, (B,m,n)x(B,n,p)."""
    if (
        a.ndim != 3
        or b.ndim != 3
        or a.shape[0] != b.shape[0]
        or a.shape[2] != b.shape[1]
    ):
        raise ShapeError(f"bmm: cannot multiply {list(a.shape)} by {list(b.shape)}")
    ad, bd = a.data, b.data

    def rule(g):
        return np.matmul(g, bd.transpose(0, 2, 1)), np.matmul(ad.transpose(0, 2, 1), g)

    return _record(np.matmul(ad, bd), "bmm", (a, b), rule)


# -- elementwise ------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _record(a.data + b.data, "add", (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _record(a.data - b.data, "sub", (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _record(ad * bd, "mul", (a, b), lambda g: (g * bd, g * ad))


def neg(a: Tensor) -> Tensor:
    return _record(-a.data, "neg", (a,), lambda g: (-g,))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _record(a.data * c, "scale", (a,), lambda g: (g * c,))


def shift(a: Tensor, c: float) -> Tensor:
    return _record(a.data + float(c), "shift", (a,), lambda g: (g,))


def tanh_elem(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _record(y, "tanh", (a,), lambda g: (g * (1.0 - y * y),))


def exp_elem(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _record(y, "exp", (a,), lambda g: (g * y,))


def log_elem(a: Tensor) -> Tensor:
    ad = a.data
    return _record(np.log(ad), "log", (a,), lambda g: (g / ad,))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    ad = a.data
    inside = (ad >= lo) & (ad <= hi)
    return _record(np.clip(ad, lo, hi), "clip", (a,), lambda g: (g * inside,))


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min; ties send the gradient to ``a``."""
    _same_shape("minimum", a, b)
    pick_a = a.data <= b.data
    return _record(
        np.where(pick_a, a.data, b.data),
        "minimum",
        (a, b),
        lambda g: (g * pick_a, g * ~pick_a),
    )


def softmax_rows(a: Tensor) -> Tensor:
    """Softmax over the last axis, shifted by the row max."""
    if a.ndim < 2:
        raise ShapeError(f"softmax_rows: expected a matrix, got shape {list(a.shape)}")
    if np.isnan(a.data).any():
        raise FloatingPointError("softmax_rows: NaN in input")
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def rule(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _record(s, "softmax_rows", (a,), rule)


# -- structural -------------------------------------------------------------


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != a.size:
        raise ShapeError(f"reshape: cannot view {list(a.shape)} as {list(shape)}")
    src = a.shape
    return _record(a.data.reshape(shape), "reshape", (a,), lambda g: (g.reshape(src),))


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    """Permute axes; the default swaps the last two."""
    if axes is None:
        if a.ndim < 2:
            raise ShapeError(f"transpose: need at least 2 dims, got {list(a.shape)}")
        axes = list(range(a.ndim - 2)) + [a.ndim - 1, a.ndim - 2]
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for shape {list(a.shape)}")
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(a.data.transpose(axes))
    return _record(out, "transpose", (a,), lambda g: (g.transpose(inv),))


def sum_all(a: Tensor) -> Tensor:
    src = a.shape
    return _record(
        np.array([a.data.sum()]), "sum_all", (a,), lambda g: (np.full(src, g[0]),)
    )


def mean_all(a: Tensor) -> Tensor:
    return scale(sum_all(a), 1.0 / a.size)


def sum_axis(a: Tensor, axis: int) -> Tensor:
    axis = axis % a.ndim
    src = a.shape
    out = a.data.sum(axis=axis)
    if out.ndim == 0:
        out = out.reshape(1)

    def rule(g):
        return (np.broadcast_to(np.expand_dims(g.reshape(np.delete(src, axis)), axis), src).copy(),)

    return _record(out, "sum_axis", (a,), rule)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("concat: empty input list")
    nd = tensors[0].ndim
    axis = axis % nd
    for t in tensors[1:]:
        if t.ndim != nd or any(
            t.shape[d] != tensors[0].shape[d] for d in range(nd) if d != axis
        ):
            raise ShapeError(
                f"concat: shapes {[list(x.shape) for x in tensors]} disagree off axis {axis}"
            )
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def rule(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
            for i in range(len(tensors))
        )

    out = np.concatenate([t.data for t in tensors], axis=axis)
    return _record(out, "concat", tuple(tensors), rule)


def concat_cols(tensors: Sequence[Tensor]) -> Tensor:
    return concat(tensors, axis=-1)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    n = a.shape[-1]
    if not 0 <= start < stop <= n:
        raise ShapeError(f"slice_cols: range [{start},{stop}) invalid for shape {list(a.shape)}")
    src = a.shape

    def rule(g):
        full = np.zeros(src)
        full[..., start:stop] = g
        return (full,)

    return _record(a.data[..., start:stop].copy(), "slice_cols", (a,), rule)


def gather_rows(a: Tensor, index) -> Tensor:
    """``a[index]`` along axis 0; output shape is index.shape + a.shape[1:]."""
    index = np.asarray(index, dtype=np.intp)
    if index.size and (index.min() < 0 or index.max() >= a.shape[0]):
        raise ShapeError(f"gather_rows: index out of range for shape {list(a.shape)}")
    src = a.shape

    def rule(g):
        full = np.zeros(src)
        np.add.at(full, index.reshape(-1), g.reshape((-1,) + src[1:]))
        return (full,)

    return _record(a.data[index], "gather_rows", (a,), rule)


# -- tape -------------------------------------------------------------------


class ComputationTape:
    """Recorded ops reachable from one output, in topological order."""

    def __init__(self, order: list[Tensor]):
        self.order = order

    @classmethod
    def from_output(cls, out: Tensor) -> "ComputationTape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(out, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                order.append(t)
                continue
            if id(t) in seen:
                continue
            seen.add(id(t))
            stack.append((t, True))
            if t._node is not None:
                for inp in reversed(t._node.inputs):
                    if inp.requires_grad and id(inp) not in seen:
                        stack.append((inp, False))
        return cls(order)

    @property
    def ops(self) -> list[str]:
        return [t._node.op for t in self.order if t._node is not None]

    def __len__(self) -> int:
        return sum(1 for t in self.order if t._node is not None)


def backward(loss: Tensor, retain_graph: bool = False) -> None:
    """Accumulate d(loss)/dt into ``t.grad`` for every tensor on the tape.

    Without ``retain_graph`` the recorded nodes are dropped afterwards, so
    the same tape cannot be replayed twice.
    """
    if loss.size != 1 or loss.ndim > 2:
        raise ContractError(f"backward needs a scalar loss, got shape {list(loss.shape)}")
    if not loss.requires_grad:
        raise ContractError("backward: loss does not depend on any tensor requiring grad")
    tape = ComputationTape.from_output(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for t in reversed(tape.order):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        t.grad = g if t.grad is None else t.grad + g
        node = t._node
        if node is None:
            continue
        for inp, gi in zip(node.inputs, node.rule(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            prev = grads.get(key)
            grads[key] = gi if prev is None else prev + gi
    if not retain_graph:
        for t in tape.order:
            t._node = None


def finite_diff_grad(f: Callable[[Tensor], Tensor | float], x: Tensor, h: float = 1e-6) -> Tensor:
    """Central-difference gradient of a scalar function, coordinate by coordinate."""
    if h <= 0:
        raise ContractError("finite_diff_grad: step h must be positive")
    base = x.data.astype(np.float64, copy=True)
    flat = base.reshape(-1)
    out = np.zeros_like(flat)

    def value(arr):
        with no_grad():
            v = f(Tensor(arr.reshape(base.shape)))
        return v.item() if isinstance(v, Tensor) else float(v)

    for i in range(flat.size):
        xp = flat.copy()
        xm = flat.copy()
        xp[i] += h
        xm[i] -= h
        out[i] = (value(xp) - value(xm)) / (2.0 * h)
    return Tensor(out.reshape(base.shape))


def parameters_grad_norm(params: Iterable[Tensor]) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    return float(np.sqrt(total))
