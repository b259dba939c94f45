"""Tensor and Parameter types plus the reverse-mode engine.

A :class:`Tensor` wraps a numpy array. Tensors produced by differentiable
operations remember their parents and a closure that maps the output
gradient to parent gradients; :func:`backward` walks that graph in reverse
topological order.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_grad_enabled = True


class ShapeError(ValueError):
    """Operand extents do not conform to an operation's shape rule."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = shapes
        extents = ", ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible extents {extents}")


class GraphError(RuntimeError):
    """The computation graph cannot be differentiated (non-scalar loss, cycle)."""


@contextlib.contextmanager
def no_grad():
    """Evaluate operations without recording the graph."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "parents", "backward_fn", "op", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.parents: tuple = ()
        self.backward_fn: Callable | None = None
        self.op = "leaf"
        self.requires_grad = requires_grad

    # -- metadata -------------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape}, dtype={self.dtype})"

    def __len__(self):
        return self.shape[0]

    # -- operator sugar (implemented in ops) ------------------------------
    def __add__(self, other):
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return ops.sub(self, other)

    def __rsub__(self, other):
        return ops.sub(other, self)

    def __mul__(self, other):
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return ops.div(self, other)

    def __neg__(self):
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        return ops.matmul(self, other)

    def __getitem__(self, index):
        return ops.index(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return ops.sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return ops.mean(self, axis, keepdims)


class Parameter(Tensor):
    """A learnable leaf tensor with a gradient buffer of the same shape."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = "", dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def make_result(data: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    """Wrap ``data`` as the output of a differentiable op.

    ``backward_fn(g)`` must return one gradient (or None) per parent.
    """
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.parents = tuple(parents)
        out.backward_fn = backward_fn
        out.requires_grad = True
    else:
        out.parents = ()
        out.backward_fn = None
        out.requires_grad = False
    return out


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    state: dict[int, int] = {}  # 1 = on stack, 2 = done
    stack = [(root, 0)]
    while stack:
        node, i = stack.pop()
        key = id(node)
        if i == 0:
            if state.get(key) == 2:
                continue
            if state.get(key) == 1:
                raise GraphError(f"cycle detected at node {node!r}")
            state[key] = 1
        if i < len(node.parents):
            stack.append((node, i + 1))
            child = node.parents[i]
            if child.requires_grad:
                cstate = state.get(id(child))
                if cstate == 1:
                    raise GraphError(f"cycle detected at node {child!r}")
                if cstate is None:
                    stack.append((child, 0))
        else:
            state[key] = 2
            order.append(node)
    return order


def backward(loss: Tensor, parameters: Iterable[Parameter] | None = None) -> None:
    """Accumulate d(loss)/d(p) into ``p.grad`` for every reachable Parameter.

    If ``parameters`` is given, their gradients are reset to zero first, so
    parameters the loss does not depend on end up with a zero gradient.
    """
    if parameters is not None:
        for p in parameters:
            p.zero_grad()
    if loss.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topological_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Parameter):
            node.grad = node.grad + g
            continue
        if node.backward_fn is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        pgrads = node.backward_fn(g)
        for parent, pg in zip(node.parents, pgrads):
            if pg is None or not parent.requires_grad:
                continue
            k = id(parent)
            if k in grads:
                grads[k] = grads[k] + pg
            else:
                grads[k] = pg


# ops builds on Tensor, so it is bound only once this module is complete
from . import ops  # noqa: E402
