"""Dense tensor with reverse-mode automatic differentiation.

Values are stored in row-major contiguous numpy arrays.  Each operation
records its inputs and a backward rule on the tensors it produces, so a
single call to ``backward`` on a scalar loss propagates gradients to every
leaf that has ``requires_grad`` set.  Shapes are immutable once created and
broadcasting is deliberately restricted: elementwise ops accept equal shapes
or a python scalar, and the handful of per-channel broadcast cases the
blocks need are provided as dedicated ops.

Precision is a process-wide switch: 64-bit for verification work, 32-bit
allowed for training throughput.
"""

from __future__ import annotations

import contextlib
from typing import Iterable, Sequence

import numpy as np

_STATE = {
    "dtype": np.float64,
    "debug": False,       # when set, every new tensor is checked for NaN/Inf
    "grad_enabled": True,
}


def set_precision(bits: int) -> None:
    """Select the process-wide float width (32 or 64)."""
    if bits == 32:
        _STATE["dtype"] = np.float32
    elif bits == 64:
        _STATE["dtype"] = np.float64
    else:
        raise ValueError(f"precision must be 32 or 64, got {bits}")


def get_dtype() -> type:
    return _STATE["dtype"]


def set_debug_checks(flag: bool) -> None:
    """Enable NaN/Inf detection on every tensor creation (slow, for debugging)."""
    _STATE["debug"] = bool(flag)


def grad_enabled() -> bool:
    return _STATE["grad_enabled"]


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (for eval and profiling passes)."""
    prev = _STATE["grad_enabled"]
    _STATE["grad_enabled"] = False
    try:
        yield
    finally:
        _STATE["grad_enabled"] = prev


class Tensor:
    """A dense array plus the bookkeeping needed for reverse-mode autodiff.

    ``_parents`` holds the input tensors of the op that produced this tensor
    and ``_backward`` the rule that maps the output gradient onto them.  Leaf
    tensors (parameters, inputs) have neither.  Gradients accumulate
    additively into ``grad``, so one forward pass followed by one backward
    pass supports shared leaves; a second backward over the same graph is
    rejected.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_spent")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.ascontiguousarray(np.asarray(data, dtype=_STATE["dtype"]))
        if arr.size == 0:
            raise ValueError(f"tensors must have positive extents, got shape {arr.shape}")
        if _STATE["debug"] and not np.all(np.isfinite(arr)):
            raise FloatingPointError("non-finite values in tensor data")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents: tuple = ()
        self._backward = None
        self._spent = False

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def zeros(*shape: int, requires_grad: bool = False) -> "Tensor":
        return Tensor(np.zeros(shape, dtype=_STATE["dtype"]), requires_grad)

    @staticmethod
    def ones(*shape: int, requires_grad: bool = False) -> "Tensor":
        return Tensor(np.ones(shape, dtype=_STATE["dtype"]), requires_grad)

    @staticmethod
    def from_op(data: np.ndarray, parents: Iterable["Tensor"], backward) -> "Tensor":
        """Wrap an op result, recording the tape edge when grads are enabled."""
        parents = tuple(parents)
        needs = _STATE["grad_enabled"] and any(p.requires_grad for p in parents)
        out = Tensor(data, requires_grad=needs)
        if needs:
            out._parents = parents
            out._backward = backward
        return out

    # -- basic properties -----------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- autodiff -------------------------------------------------------------

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def backward(self) -> None:
        """Propagate d(self)/d(leaf) into every reachable leaf's ``grad``.

        ``self`` must be scalar.  The recorded graph is single-use: rules may
        release saved buffers, so a second backward over any node visited
        here raises.
        """
        if self.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
        if self._spent:
            raise RuntimeError("backward() already ran over this graph")

        order: list[Tensor] = []
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
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is None:
                continue
            if node._spent:
                raise RuntimeError("backward() already ran over part of this graph")
            node._spent = True
            node._backward(node.grad)
            node._backward = None
            node._parents = ()
            if node is not self:
                node.grad = None  # interior grads are transient
        self._spent = True

    def zero_grad(self) -> None:
        self.grad = None

    # -- operators (definitions live in ops.py, bound at import) ---------------

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
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def collect_leaves(t: Tensor) -> list[Tensor]:
    """All reachable leaves with requires_grad, in deterministic visit order."""
    out, seen, stack = [], set(), [t]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        if node.requires_grad and not node._parents:
            out.append(node)
        stack.extend(node._parents)
    return out
