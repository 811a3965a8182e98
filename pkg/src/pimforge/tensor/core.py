"""Tensor, tape and reverse-mode backward pass.

Operations record a :class:`Node` on the innermost active :class:`Tape`
whenever one of their inputs requires grad. Outside of a tape nothing is
recorded, which doubles as an inference (no-grad) mode.
"""
from __future__ import annotations

import os
import threading
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

DEBUG = os.environ.get("PIMFORGE_DEBUG", "0") == "1"

_local = threading.local()


class ShapeError(ValueError):
    """Raised when operand shapes do not conform for an op kind."""


class TapeError(RuntimeError):
    pass


class Tensor:
    """Dense N-d array with an optional gradient accumulator."""

    __slots__ = ("data", "requires_grad", "grad", "_node", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind not in "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._node: Optional[Node] = None
        self.name = name

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
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # Operator sugar; the implementations live in ops.py.
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __pow__(self, k):
        from . import ops
        return ops.power(self, k)

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

    def transpose(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)


class Node:
    __slots__ = ("kind", "inputs", "out", "backward_fn")

    def __init__(self, kind: str, inputs: Sequence[Tensor], out: Tensor, backward_fn: Callable):
        self.kind = kind
        self.inputs = tuple(inputs)
        self.out = out
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of operation nodes for one forward pass.

    Use as a context manager; tapes nest, and ops record on the innermost.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.consumed = False

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def reset(self) -> None:
        self.nodes = []
        self.consumed = False

    def __len__(self) -> int:
        return len(self.nodes)

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _stack()
        if stack and stack[-1] is self:
            stack.pop()


def _stack() -> list:
    s = getattr(_local, "stack", None)
    if s is None:
        s = _local.stack = []
    return s


def active_tape() -> Optional[Tape]:
    s = _stack()
    return s[-1] if s else None


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if dtype is None:
        dtype = np.asarray(x).dtype if np.asarray(x).dtype.kind == "f" else np.float64
    return Tensor(np.asarray(x, dtype=dtype))


def make_result(kind: str, data: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap ``data`` as the output of an op, recording a node if needed."""
    if DEBUG and not np.all(np.isfinite(data)):
        if all(np.all(np.isfinite(t.data)) for t in inputs):
            raise FloatingPointError(f"{kind}: non-finite output from finite inputs")
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        node = Node(kind, inputs, out, backward_fn)
        out._node = node
        tape.record(node)
    return out


def backward(tape: Tape, loss: Tensor, params: Iterable[Tensor] | None = None) -> None:
    """Fill ``.grad`` of every requires-grad leaf reachable from ``loss``.

    Leaf grads accumulate across calls; ``params`` listed but not reached
    receive zero gradients.
    """
    if loss.size != 1:
        raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if tape.consumed:
        raise TapeError("backward already ran on this tape; call tape.reset() first")
    if loss._node is None or not tape.nodes:
        raise TapeError("loss was not recorded on this tape")
    ids = {id(n) for n in tape.nodes}
    if id(loss._node) not in ids:
        raise TapeError("loss was not recorded on this tape")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        in_grads = node.backward_fn(g)
        for inp, gi in zip(node.inputs, in_grads):
            if gi is None or not inp.requires_grad:
                continue
            if gi.shape != inp.shape:
                raise ShapeError(f"{node.kind} backward produced grad {gi.shape} for input {inp.shape}")
            if inp._node is None:
                if inp.grad is None:
                    inp.grad = np.array(gi, dtype=inp.data.dtype, copy=True)
                else:
                    inp.grad += gi
            else:
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
    tape.consumed = True
    if params is not None:
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
