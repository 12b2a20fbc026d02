"""Dense tensor with tape-based reverse-mode differentiation."""

from __future__ import annotations

import contextlib
from typing import Callable, Optional, Sequence

import numpy as np

DTYPES = {"f32": np.float32, "f64": np.float64}

_default_dtype = np.float32


class GraphError(RuntimeError):
    """Backward was requested on a graph that cannot be replayed."""


class DimensionError(ValueError):
    pass


class DomainError(ValueError):
    pass


def set_default_dtype(dtype) -> None:
    global _default_dtype
    _default_dtype = _resolve_dtype(dtype)


def get_default_dtype():
    return _default_dtype


def _resolve_dtype(dtype):
    if dtype is None:
        return None
    if isinstance(dtype, str):
        if dtype not in DTYPES:
            raise ValueError(f"unsupported dtype {dtype!r}; expected one of {sorted(DTYPES)}")
        return DTYPES[dtype]
    dt = np.dtype(dtype).type
    if dt not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {np.dtype(dtype)}; only float32/float64")
    return dt


class Node:
    """One executed operation as recorded on a tape."""

    __slots__ = ("parents", "backward_fn", "tape", "index", "freed", "name")

    def __init__(self, parents, backward_fn, name):
        self.parents = parents
        self.backward_fn = backward_fn
        self.name = name
        self.tape = None
        self.index = -1
        self.freed = False


class Tape:
    """Ordered record of differentiable operations.

    Operations append themselves while the tape is active. ``backward`` walks
    the record in exact reverse order, then frees it: a second backward over the
    same graph raises :class:`GraphError` until new operations are recorded.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def record(self, node: Node) -> None:
        node.tape = self
        node.index = len(self.nodes)
        self.nodes.append(node)

    def reset(self) -> None:
        for node in self.nodes:
            node.freed = True
        self.nodes = []

    def __len__(self):
        return len(self.nodes)

    def __enter__(self):
        _tape_stack.append(self)
        return self

    def __exit__(self, *exc):
        popped = _tape_stack.pop()
        assert popped is self
        self.reset()
        return False

    def backward(self, loss: "Tensor") -> None:
        if loss.data.size != 1:
            raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not loss.requires_grad:
            return
        node = loss._node
        if node is None:
            # a leaf scalar: its own gradient is one
            loss._accumulate(np.ones_like(loss.data))
            return
        if node.freed:
            raise GraphError("graph already consumed by a previous backward; rebuild it")
        if node.tape is not self or self.nodes[node.index] is not node:
            raise GraphError("loss was not produced on this tape")

        grads: dict[int, np.ndarray] = {node.index: np.ones_like(loss.data)}
        for idx in range(node.index, -1, -1):
            g = grads.pop(idx, None)
            if g is None:
                continue
            cur = self.nodes[idx]
            in_grads = cur.backward_fn(g)
            for parent, pg in zip(cur.parents, in_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if parent._node is None:
                    parent._accumulate(pg)
                else:
                    pi = parent._node.index
                    if pi in grads:
                        grads[pi] = grads[pi] + pg
                    else:
                        grads[pi] = pg
        self.reset()


_global_tape = Tape()
_tape_stack: list[Tape] = [_global_tape]
_grad_enabled = [True]


def active_tape() -> Tape:
    return _tape_stack[-1]


@contextlib.contextmanager
def no_grad():
    _grad_enabled.append(False)
    try:
        yield
    finally:
        _grad_enabled.pop()


def grad_enabled() -> bool:
    return _grad_enabled[-1]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_node")
    __array_priority__ = 100

    def __init__(self, data, dtype=None, requires_grad: bool = False):
        dt = _resolve_dtype(dtype)
        if isinstance(data, Tensor):
            data = data.data
        if dt is None:
            if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
                dt = data.dtype.type
            else:
                dt = _default_dtype
        self.data = np.array(data, dtype=dt, copy=True) if not isinstance(data, np.ndarray) or data.dtype != dt else data
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._node: Optional[Node] = None

    # -- basic properties -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def is_leaf(self) -> bool:
        return self._node is None

    def _accumulate(self, g: np.ndarray) -> None:
        g = np.asarray(g, dtype=self.data.dtype)
        if g.shape != self.data.shape:
            g = g.reshape(self.data.shape)
        self.grad = g.copy() if self.grad is None else self.grad + g

    def backward(self) -> None:
        active_tape().backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self):
        return self.data.shape[0]

    # -- operator sugar; implementations live in cdsp.engine.ops ----------
    def __add__(self, other):
        from cdsp.engine import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from cdsp.engine import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from cdsp.engine import ops

        return ops.sub(other, self)

    def __mul__(self, other):
        from cdsp.engine import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from cdsp.engine import ops

        return ops.div(self, other)

    def __rtruediv__(self, other):
        from cdsp.engine import ops

        return ops.div(other, self)

    def __neg__(self):
        from cdsp.engine import ops

        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from cdsp.engine import ops

        return ops.matmul(self, other)

    def __getitem__(self, idx):
        from cdsp.engine import ops

        return ops.getitem(self, idx)

    def reshape(self, *shape):
        from cdsp.engine import ops

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from cdsp.engine import ops

        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)

    @property
    def T(self):
        return self.transpose()

    def sum(self, axis=None, keepdims=False):
        from cdsp.engine import ops

        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from cdsp.engine import ops

        return ops.mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def make_result(
    data: np.ndarray,
    parents: Sequence[Tensor],
    backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]],
    name: str = "",
) -> Tensor:
    """Wrap ``data`` as an op output, recording a tape node when needed."""
    # 0-d arithmetic yields numpy scalars; keep them as arrays so the dtype survives
    out = Tensor(np.asarray(data))
    if grad_enabled() and any(p.requires_grad for p in parents):
        node = Node(tuple(parents), backward_fn, name)
        active_tape().record(node)
        out.requires_grad = True
        out._node = node
    return out


def tensor(data, dtype=None, requires_grad=False) -> Tensor:
    return Tensor(data, dtype=dtype, requires_grad=requires_grad)


def zeros(shape, dtype=None, requires_grad=False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=_resolve_dtype(dtype) or _default_dtype), requires_grad=requires_grad)


def ones(shape, dtype=None, requires_grad=False) -> Tensor:
    return Tensor(np.ones(shape, dtype=_resolve_dtype(dtype) or _default_dtype), requires_grad=requires_grad)
