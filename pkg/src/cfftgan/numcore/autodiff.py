"""Tensor type, differentiation tape and reverse-mode backward pass."""
from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, Sequence

import numpy as np


class ShapeError(ValueError):
    """Inputs do not conform to a primitive's shape signature."""


class UnknownPrimitiveError(KeyError):
    pass


class NonScalarError(ValueError):
    pass


class DetachedError(RuntimeError):
    pass


_state = threading.local()


def default_dtype() -> np.dtype:
    return getattr(_state, "dtype", np.dtype(np.float32))


def set_default_dtype(dtype) -> None:
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported float width: {dtype}")
    _state.dtype = dtype


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily switch the default float width (``"float32"``/``"float64"``)."""
    old = default_dtype()
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = old


class Tensor:
    """Row-major float array that may participate in a differentiation tape."""

    __slots__ = ("data", "requires_grad", "_tape", "_node", "__weakref__")
    __array_priority__ = 100.0

    def __init__(self, data: Any, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        # python scalars take the default width so they do not promote float32 operands
        if isinstance(data, (int, float)) or arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(default_dtype())
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self._tape: Tape | None = None
        self._node: int | None = None

    # -- metadata -------------------------------------------------------
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
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def node_id(self) -> int | None:
        return self._node

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operators ------------------------------------------------------
    def __add__(self, other):
        return apply_primitive("add", [self, other])

    def __radd__(self, other):
        return apply_primitive("add", [other, self])

    def __sub__(self, other):
        return apply_primitive("sub", [self, other])

    def __rsub__(self, other):
        return apply_primitive("sub", [other, self])

    def __mul__(self, other):
        return apply_primitive("mul", [self, other])

    def __rmul__(self, other):
        return apply_primitive("mul", [other, self])

    def __truediv__(self, other):
        return apply_primitive("div", [self, other])

    def __rtruediv__(self, other):
        return apply_primitive("div", [other, self])

    def __neg__(self):
        return apply_primitive("neg", [self])

    def __matmul__(self, other):
        return apply_primitive("matmul", [self, other])

    def __rmatmul__(self, other):
        return apply_primitive("matmul", [other, self])

    def __pow__(self, exponent: float):
        return apply_primitive("power", [self], exponent=float(exponent))

    def __getitem__(self, index):
        return apply_primitive("slice", [self], index=index)

    # -- method sugar ---------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        return apply_primitive("sum", [self], axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return apply_primitive("mean", [self], axis=axis, keepdims=keepdims)

    def var(self, axis=None, keepdims=False):
        return apply_primitive("var", [self], axis=axis, keepdims=keepdims)

    def max(self, axis=None, keepdims=False):
        return apply_primitive("max", [self], axis=axis, keepdims=keepdims)

    def min(self, axis=None, keepdims=False):
        return apply_primitive("min", [self], axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return apply_primitive("reshape", [self], shape=tuple(shape))

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        return apply_primitive("transpose", [self], axes=tuple(axes))

    def exp(self):
        return apply_primitive("exp", [self])

    def log(self):
        return apply_primitive("log", [self])

    def sqrt(self):
        return apply_primitive("sqrt", [self])

    def tanh(self):
        return apply_primitive("tanh", [self])

    def relu(self):
        return apply_primitive("relu", [self])

    def abs(self):
        return apply_primitive("abs", [self])


def as_tensor(x: Any) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# Primitive registry


@dataclass(frozen=True)
class Primitive:
    """Forward kernel plus vector-Jacobian product.

    ``forward(arrays, **attrs) -> (out, saved)``;
    ``vjp(g, saved, arrays, **attrs) -> tuple of input gradients (None allowed)``.
    """

    name: str
    forward: Callable[..., tuple[np.ndarray, Any]]
    vjp: Callable[..., Sequence[np.ndarray | None]]
    arity: int | None = None


_REGISTRY: dict[str, Primitive] = {}


def register(name: str, arity: int | None = None):
    def deco(cls):
        _REGISTRY[name] = Primitive(name, cls.forward, cls.vjp, arity)
        return cls

    return deco


def primitive_names() -> list[str]:
    return sorted(_REGISTRY)


# ---------------------------------------------------------------------------
# Tape


@dataclass
class Node:
    prim: Primitive | None  # None marks a leaf
    parents: tuple[int | None, ...] = ()
    inputs: tuple[np.ndarray, ...] = ()
    attrs: dict = field(default_factory=dict)
    saved: Any = None


class Tape:
    """Append-only record of primitive applications.

    Use as a context manager; while active, primitives whose inputs require
    gradients are recorded on it. Tapes nest: the innermost one records.
    """

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self._leaf_ids: dict[int, int] = {}
        self._leaf_refs: list[Tensor] = []

    def __enter__(self) -> "Tape":
        stack = _tape_stack()
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def node_of(self, t: Tensor) -> int:
        if t._tape is self:
            return t._node  # type: ignore[return-value]
        key = id(t)
        nid = self._leaf_ids.get(key)
        if nid is None:
            nid = len(self.nodes)
            self.nodes.append(Node(None))
            self._leaf_ids[key] = nid
            self._leaf_refs.append(t)
        return nid

    def leaf_id(self, t: Tensor) -> int | None:
        if t._tape is self:
            return t._node
        return self._leaf_ids.get(id(t))

    def record(self, prim: Primitive, inputs: Sequence[Tensor], arrays, attrs, saved, out: Tensor):
        parents = tuple(self.node_of(t) if t.requires_grad else None for t in inputs)
        nid = len(self.nodes)
        self.nodes.append(Node(prim, parents, tuple(arrays), attrs, saved))
        out.requires_grad = True
        out._tape = self
        out._node = nid


def _tape_stack() -> list[Tape]:
    stack = getattr(_state, "tapes", None)
    if stack is None:
        stack = _state.tapes = []
    return stack


def active_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


@contextlib.contextmanager
def no_tape() -> Iterator[None]:
    """Suspend recording (inference mode)."""
    stack = _tape_stack()
    saved = list(stack)
    stack.clear()
    try:
        yield
    finally:
        stack.extend(saved)


def apply_primitive(op: str, inputs: Sequence[Any], **attrs) -> Tensor:
    prim = _REGISTRY.get(op)
    if prim is None:
        raise UnknownPrimitiveError(f"unknown primitive {op!r}")
    tensors = [as_tensor(x) for x in inputs]
    if prim.arity is not None and len(tensors) != prim.arity:
        raise ShapeError(f"{op}: expected {prim.arity} inputs, got {len(tensors)}")
    arrays = [t.data for t in tensors]
    try:
        out, saved = prim.forward(arrays, **attrs)
    except ShapeError:
        raise
    except ValueError as exc:
        shapes = " vs ".join(str(a.shape) for a in arrays)
        raise ShapeError(f"shape mismatch in {op!r}: {shapes} ({exc})") from exc
    result = Tensor(out)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in tensors):
        tape.record(prim, tensors, arrays, attrs, saved, result)
    return result


# ---------------------------------------------------------------------------
# Backward


class GradMap(dict):
    """Gradients keyed by node id; also indexable by the leaf Tensor itself."""

    def __init__(self, tape: Tape, grads: dict[int, np.ndarray]):
        super().__init__({k: Tensor(v) for k, v in grads.items()})
        self.tape = tape

    def _key(self, key):
        if isinstance(key, Tensor):
            nid = self.tape.leaf_id(key)
            if nid is None:
                raise KeyError("tensor is not on this tape")
            return nid
        return key

    def __getitem__(self, key) -> Tensor:
        return super().__getitem__(self._key(key))

    def __contains__(self, key) -> bool:
        try:
            return super().__contains__(self._key(key))
        except KeyError:
            return False

    def get(self, key, default=None):
        try:
            return self[key]
        except KeyError:
            return default


def backward(loss: Tensor) -> GradMap:
    """Reverse sweep from a scalar loss; returns gradients of reachable leaves."""
    if loss.size != 1:
        raise NonScalarError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None or loss._node is None:
        raise DetachedError("loss is not recorded on a tape (no input requires grad?)")
    grads: dict[int, np.ndarray] = {loss._node: np.ones_like(loss.data)}
    leaf_grads: dict[int, np.ndarray] = {}
    for nid in range(loss._node, -1, -1):
        g = grads.pop(nid, None)
        if g is None:
            continue
        node = tape.nodes[nid]
        if node.prim is None:
            leaf_grads[nid] = g
            continue
        in_grads = node.prim.vjp(g, node.saved, node.inputs, **node.attrs)
        for parent, gi in zip(node.parents, in_grads):
            if parent is None or gi is None:
                continue
            prev = grads.get(parent)
            grads[parent] = gi if prev is None else prev + gi
    return GradMap(tape, leaf_grads)
