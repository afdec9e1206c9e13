"""Tensor type and the reverse-mode differentiation graph.

A :class:`Tensor` wraps a numpy array. Applying a :class:`Function` to tensors
that require gradients records a node; :func:`backward` and :func:`grad` walk
those nodes in reverse topological order.

Backward rules are written with the same primitives as forward passes, so a
backward pass run with ``create_graph=True`` is itself recorded and can be
differentiated again. Only primitives flagged ``double_backward = True`` may
appear on such a path; the R1 penalty needs exactly that subset.
"""
from __future__ import annotations

import contextlib
import threading
from typing import Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """A primitive received operands whose shapes violate its contract."""


class NonFiniteError(ArithmeticError):
    """A forward primitive produced NaN or Inf."""


class GraphError(RuntimeError):
    """Invalid use of the differentiation graph (detached loss, non-scalar loss, ...)."""


_state = threading.local()


def _flag(name, default):
    return getattr(_state, name, default)


def is_grad_enabled() -> bool:
    return _flag("grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    prev = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


@contextlib.contextmanager
def enable_grad():
    prev = is_grad_enabled()
    _state.grad_enabled = True
    try:
        yield
    finally:
        _state.grad_enabled = prev


def finite_checks_enabled() -> bool:
    return _flag("check_finite", True)


@contextlib.contextmanager
def finite_checks(enabled: bool):
    prev = finite_checks_enabled()
    _state.check_finite = enabled
    try:
        yield
    finally:
        _state.check_finite = prev


class Node:
    __slots__ = ("fn", "parents")

    def __init__(self, fn: "Function", parents: tuple["Tensor", ...]):
        self.fn = fn
        self.parents = parents


class Tensor:
    """Dense float array that may participate in a differentiation graph."""

    __slots__ = ("data", "requires_grad", "grad", "node", "name", "__weakref__")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node: Node | None = None
        self.name = name

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self.node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def __len__(self) -> int:
        return self.shape[0]

    def backward(self, leaves: Iterable["Tensor"] | None = None, retain_graph: bool = False) -> None:
        backward(self, leaves=leaves, retain_graph=retain_graph)

    # -- operator sugar; implementations live in ops.py -----------------
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops
        return ops.add(self, other)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.rsub(self, other)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.rdiv(self, other)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops
        return ops.getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    @property
    def T(self):
        from . import ops
        return ops.swap_last(self)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


class Function:
    """A differentiable primitive.

    Subclasses implement ``forward`` on raw arrays and ``backward`` on tensors.
    ``backward`` receives the upstream gradient as a :class:`Tensor` plus a
    tuple saying which inputs need a gradient, and returns one entry per input
    (``None`` where no gradient is needed).
    """

    double_backward = False
    name = "primitive"

    def forward(self, *arrays: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: Tensor, needs: tuple[bool, ...]) -> Sequence[Tensor | None]:
        raise NotImplementedError

    def release(self) -> None:
        """Drop saved arrays once the node's backward has run."""
        self.__dict__.clear()

    @classmethod
    def apply(cls, *inputs, **kwargs) -> Tensor:
        fn = cls(**kwargs)
        tensors = tuple(as_tensor(t) for t in inputs)
        out = fn.forward(*(t.data for t in tensors))
        if finite_checks_enabled() and not np.all(np.isfinite(out)):
            raise NonFiniteError(f"{fn.name}: non-finite values in forward output of shape {np.shape(out)}")
        result = Tensor(out, dtype=out.dtype)
        if is_grad_enabled() and any(t.requires_grad for t in tensors):
            result.requires_grad = True
            result.node = Node(fn, tensors)
            fn.inputs = tensors
        return result


def _toposort(roots: Sequence[Tensor]) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(r, False) for r in roots if r.requires_grad]
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
            for p in t.node.parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
    return order  # parents before children


def _run(roots, root_grads, targets, create_graph, retain_graph):
    """Propagate gradients from ``roots``; returns {id(leaf or target): (tensor, grad)}."""
    order = _toposort(roots)
    target_ids = None if targets is None else {id(t) for t in targets}
    if target_ids is None:
        relevant = {id(t) for t in order}
    else:
        relevant = set()
        for t in order:
            if id(t) in target_ids or (t.node is not None and any(id(p) in relevant for p in t.node.parents)):
                relevant.add(id(t))
    grads: dict[int, Tensor] = {}
    for r, g in zip(roots, root_grads):
        grads[id(r)] = grads[id(r)] + g if id(r) in grads else g
    collected: dict[int, tuple[Tensor, Tensor]] = {}
    ctx = enable_grad() if create_graph else no_grad()
    with ctx, finite_checks(False):
        for t in reversed(order):
            g = grads.pop(id(t), None)
            if g is None or id(t) not in relevant:
                continue
            is_target = target_ids is not None and id(t) in target_ids
            if t.node is None or is_target:
                collected[id(t)] = (t, g)
                if t.node is None or target_ids is not None and not _feeds_target(t, relevant, target_ids):
                    continue
            fn = t.node.fn
            if create_graph and not fn.double_backward:
                raise GraphError(f"{fn.name} does not support differentiating its backward pass")
            needs = tuple(id(p) in relevant for p in t.node.parents)
            pgrads = fn.backward(g, needs)
            for p, pg, need in zip(t.node.parents, pgrads, needs):
                if not need or pg is None:
                    continue
                if pg.shape != p.shape:
                    raise ShapeError(f"{fn.name}: backward produced {pg.shape} for input {p.shape}")
                grads[id(p)] = grads[id(p)] + pg if id(p) in grads else pg
            if not retain_graph and not create_graph:
                fn.release()
                t.node = None
    return collected


def _feeds_target(t: Tensor, relevant: set[int], target_ids: set[int]) -> bool:
    return any(id(p) in relevant for p in t.node.parents)


def backward(loss: Tensor, leaves: Iterable[Tensor] | None = None, retain_graph: bool = False) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every trainable leaf.

    ``leaves`` optionally lists parameters that must end up with a gradient
    array even if the loss does not depend on them (they receive zeros).
    The graph is released afterwards unless ``retain_graph`` is set.
    """
    if loss.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GraphError("loss is detached from every trainable leaf")
    seed = Tensor(np.ones(loss.shape, dtype=loss.dtype))
    for t, g in _run([loss], [seed], None, False, retain_graph).values():
        t.grad = g.data.copy() if t.grad is None else t.grad + g.data
    if leaves is not None:
        for t in leaves:
            if t.grad is None:
                t.grad = np.zeros_like(t.data)


def grad(outputs: Tensor | Sequence[Tensor], inputs: Sequence[Tensor], grad_outputs=None,
         create_graph: bool = False, retain_graph: bool | None = None) -> list[Tensor]:
    """Return d(outputs)/d(inputs) as tensors without touching ``.grad``.

    With ``create_graph=True`` the returned gradients are themselves part of
    the graph and can be differentiated by a later :func:`backward`.
    """
    outs = [outputs] if isinstance(outputs, Tensor) else list(outputs)
    if grad_outputs is None:
        for o in outs:
            if o.size != 1:
                raise GraphError(f"grad needs scalar outputs or explicit grad_outputs, got {o.shape}")
        grad_outputs = [Tensor(np.ones(o.shape, dtype=o.dtype)) for o in outs]
    else:
        grad_outputs = [as_tensor(g) for g in (grad_outputs if isinstance(grad_outputs, (list, tuple)) else [grad_outputs])]
    if not any(o.requires_grad for o in outs):
        raise GraphError("outputs are detached from every input")
    if retain_graph is None:
        retain_graph = create_graph
    collected = _run(outs, grad_outputs, list(inputs), create_graph, retain_graph)
    result = []
    for x in inputs:
        hit = collected.get(id(x))
        result.append(hit[1] if hit is not None else Tensor(np.zeros_like(x.data)))
    return result
