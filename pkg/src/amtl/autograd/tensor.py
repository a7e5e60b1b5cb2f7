"""Dense tensors with reverse-mode differentiation.

A :class:`Tensor` wraps a numpy array. Every differentiable operation goes
through :func:`apply_primitive`, which looks the operation up in a registry,
validates shapes, computes the forward value and records a :class:`Node`
so :func:`backward` can replay the graph in reverse topological order.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

from amtl.errors import AmtlError, ShapeError, UnknownPrimitiveError

_REGISTRY: dict[str, "Primitive"] = {}
_GRAD_ENABLED = True


class Primitive:
    """One differentiable operation.

    Subclasses set ``name`` and implement ``forward`` (returning the output
    array and whatever must be saved) and ``backward`` (returning one
    gradient array, or None, per input).
    """

    name: str = ""

    def check(self, shapes: list[tuple[int, ...]], attrs: dict) -> None:
        pass

    def forward(self, arrays: list[np.ndarray], attrs: dict) -> tuple[np.ndarray, Any]:
        raise NotImplementedError

    def backward(self, saved: Any, g: np.ndarray, arrays: list[np.ndarray], attrs: dict) -> Sequence[np.ndarray | None]:
        raise NotImplementedError

    def shape_error(self, *shapes, detail: str = "") -> ShapeError:
        shown = " and ".join(str(tuple(s)) for s in shapes)
        msg = f"{self.name}: incompatible shapes {shown}"
        return ShapeError(f"{msg} ({detail})" if detail else msg)


def register(cls: type[Primitive]) -> type[Primitive]:
    _REGISTRY[cls.name] = cls()
    return cls


def primitive_names() -> list[str]:
    return sorted(_REGISTRY)


@dataclass(eq=False)
class Node:
    prim: Primitive
    inputs: tuple["Tensor", ...]
    attrs: dict
    saved: Any


class Tensor:
    __slots__ = ("data", "grad", "node", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = True, name: str | None = None, dtype=None):
        arr = np.array(data, dtype=dtype if dtype is not None else None, copy=True)
        if arr.dtype.kind not in "f":
            arr = arr.astype(np.float64)
        if any(d <= 0 for d in arr.shape):
            raise ShapeError(f"tensor extents must be positive, got {arr.shape}")
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.node: Node | None = None
        self.requires_grad = requires_grad
        self.name = name

    @classmethod
    def _from_op(cls, data: np.ndarray, node: Node | None, requires_grad: bool) -> "Tensor":
        t = cls.__new__(cls)
        t.data = data
        t.grad = None
        t.node = node
        t.requires_grad = requires_grad
        t.name = None
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
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self.node is None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor._from_op(self.data, None, False)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label})"

    def _lift(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor._from_op(np.asarray(other, dtype=self.dtype), None, False)

    def __add__(self, other):
        return apply_primitive("add", [self, self._lift(other)])

    def __radd__(self, other):
        return apply_primitive("add", [self._lift(other), self])

    def __sub__(self, other):
        return apply_primitive("sub", [self, self._lift(other)])

    def __rsub__(self, other):
        return apply_primitive("sub", [self._lift(other), self])

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return apply_primitive("mul", [self, other])
        return apply_primitive("scale", [self], {"factor": float(other)})

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor / tensor is not a supported primitive")
        return apply_primitive("scale", [self], {"factor": 1.0 / float(other)})

    def __neg__(self):
        return apply_primitive("scale", [self], {"factor": -1.0})

    def __matmul__(self, other):
        return apply_primitive("matmul", [self, other])

    def __getitem__(self, key):
        return apply_primitive("slice", [self], {"key": key})

    def sum(self, axis=None, keepdims: bool = False):
        return apply_primitive("sum", [self], {"axis": axis, "keepdims": keepdims})

    def mean(self, axis=None, keepdims: bool = False):
        return apply_primitive("mean", [self], {"axis": axis, "keepdims": keepdims})

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return apply_primitive("reshape", [self], {"shape": tuple(shape)})

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return apply_primitive("transpose", [self], {"axes": tuple(axes) or None})

    def relu(self):
        return apply_primitive("relu", [self])

    def sigmoid(self):
        return apply_primitive("sigmoid", [self])

    def exp(self):
        return apply_primitive("exp", [self])

    def log(self):
        return apply_primitive("log", [self])

    def softmax(self, axis: int = -1):
        return apply_primitive("softmax", [self], {"axis": axis})

    def log_softmax(self, axis: int = -1):
        return apply_primitive("log_softmax", [self], {"axis": axis})


@contextlib.contextmanager
def no_grad():
    """Forward-only evaluation: no nodes are recorded inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def apply_primitive(name: str, inputs: Sequence[Tensor], attrs: dict | None = None) -> Tensor:
    prim = _REGISTRY.get(name)
    if prim is None:
        raise UnknownPrimitiveError(f"unknown primitive {name!r}")
    attrs = dict(attrs or {})
    for t in inputs:
        if not isinstance(t, Tensor):
            raise TypeError(f"{name}: inputs must be Tensors, got {type(t).__name__}")
    prim.check([t.shape for t in inputs], attrs)
    arrays = [t.data for t in inputs]
    out, saved = prim.forward(arrays, attrs)
    track = _GRAD_ENABLED and any(t.requires_grad for t in inputs)
    node = Node(prim, tuple(inputs), attrs, saved) if track else None
    return Tensor._from_op(out, node, track)


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for parent in reversed(t.node.inputs):
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
    return order


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if root.size != 1:
        raise ShapeError(f"backward: root must be a scalar, got shape {root.shape}")
    if not root.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for t in reversed(_topo_order(root)):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t.node is None:
            t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        node = t.node
        in_grads = node.prim.backward(node.saved, g, [x.data for x in node.inputs], node.attrs)
        for parent, pg in zip(node.inputs, in_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None


def graph_nodes(root: Tensor) -> list[Tensor]:
    """Topologically ordered tensors reachable from ``root`` (inputs first)."""
    return _topo_order(root)


Fn = Callable[[Tensor], Tensor]
