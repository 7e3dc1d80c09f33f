"""Reverse-mode automatic differentiation over float64 numpy arrays.

The graph is rebuilt on every forward pass: each op output keeps references to
its parents and a closure mapping the output gradient to parent gradients.
``Tensor.backward`` walks the nodes in reverse topological order.

Broadcasting is deliberately restricted to leading-dimension expansion: a
tensor of shape ``(n,)`` may combine with ``(..., n)``, a ``(d, n)`` with
``(..., d, n)``, and nothing else.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import ContractError, DimensionError, EmptyPoolError, NumericalError

Array = np.ndarray


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: tuple = (),
        _backward: Callable | None = None,
        op: str = "",
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Array | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.op = op

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag}, op={self.op or 'leaf'!r})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> Array:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            _scalar_error(self)
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # operator sugar
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def topological_order(self) -> list["Tensor"]:
        """Nodes reachable from ``self`` that require grad, parents before children."""
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
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        return order

    def backward(self, grad: Array | None = None) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``.grad``.

        Intermediate gradients live only for the duration of the call, so
        calling ``backward`` twice without zeroing adds exactly twice the
        leaf gradients.
        """
        if not self.requires_grad:
            raise ContractError("backward() on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                _scalar_error(self)
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=np.float64)
            if grad.shape != self.shape:
                raise DimensionError(f"seed gradient shape {grad.shape} != tensor shape {self.shape}")

        pending: dict[int, Array] = {id(self): grad}
        for node in reversed(self.topological_order()):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = pg


def _scalar_error(t: Tensor):
    raise ContractError(f"expected a scalar tensor, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: Array, parents: tuple[Tensor, ...], backward: Callable, op: str) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, backward, op)
    return Tensor(data, op=op)


# ---------------------------------------------------------------------------
# elementwise


def _leading_broadcast(a: tuple, b: tuple) -> tuple:
    if a == b:
        return a
    short, long_ = (a, b) if len(a) < len(b) else (b, a)
    if len(short) == len(long_) or long_[len(long_) - len(short):] != short:
        raise DimensionError(f"shapes {a} and {b} are not leading-dimension broadcastable")
    return long_


def _unbroadcast(g: Array, shape: tuple) -> Array:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead)))


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _leading_broadcast(a.shape, b.shape)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _leading_broadcast(a.shape, b.shape)

    def backward(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _node(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        return scale(a, float(b))
    if not isinstance(a, Tensor) and np.ndim(a) == 0:
        return scale(b, float(a))
    a, b = as_tensor(a), as_tensor(b)
    _leading_broadcast(a.shape, b.shape)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(a.data * b.data, (a, b), backward, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    a = as_tensor(a)
    return _node(a.data * c, (a,), lambda g: (g * c,), "scale")


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a: Tensor) -> Tensor:
    # tanh form is overflow-free for large |x|
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    return _node(np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,), "relu")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    x = a.data
    return _node(np.log(x), (a,), lambda g: (g / x,), "log")


def tabs(a: Tensor) -> Tensor:
    sign = np.sign(a.data)
    return _node(np.abs(a.data), (a,), lambda g: (g * sign,), "abs")


ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "relu": relu,
}


def elementwise(op: str, *args) -> Tensor:
    try:
        fn = ELEMENTWISE[op]
    except KeyError:
        raise ContractError(f"unknown elementwise op {op!r}; expected one of {sorted(ELEMENTWISE)}") from None
    return fn(*args)


def where(cond: Array, a: Tensor, b: Tensor) -> Tensor:
    """Select ``a`` where ``cond`` else ``b``. ``cond`` is a constant boolean mask."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"where: branch shapes {a.shape} and {b.shape} differ")
    cond = np.broadcast_to(np.asarray(cond, dtype=bool), a.shape)

    def backward(g):
        return np.where(cond, g, 0.0), np.where(cond, 0.0, g)

    return _node(np.where(cond, a.data, b.data), (a, b), backward, "where")


# ---------------------------------------------------------------------------
# linear algebra and reductions


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return _node(a.data @ b.data, (a, b), backward, "matmul")


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {a.shape}")
    return _node(a.data.T, (a,), lambda g: (g.T,), "transpose")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    src = a.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),), "reshape")


def tsum(a: Tensor, axis=None) -> Tensor:
    src = a.shape

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, src).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), src).copy(),)

    return _node(np.asarray(a.data.sum(axis=axis)), (a,), backward, "sum")


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    return scale(tsum(a, axis), 1.0 / n)


def _is_basic(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (int, np.integer, slice)) or p is Ellipsis or p is None for p in parts)


def getitem(a: Tensor, index) -> Tensor:
    src = a.shape
    basic = _is_basic(index)

    def backward(g):
        full = np.zeros(src)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _node(np.array(a.data[index]), (a,), backward, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {[t.shape for t in tensors]}: {exc}") from None
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _node(data, tuple(tensors), backward, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise DimensionError(f"stack: mismatched shapes {sorted(shapes)}")
    data = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _node(data, tuple(tensors), backward, "stack")


# ---------------------------------------------------------------------------
# lookups


def take(table: Tensor, ids: Array, padding_idx: int | None = None) -> Tensor:
    """Row lookup ``table[ids]``.

    Ids equal to ``padding_idx`` read as zero vectors and send no gradient, so
    the padding row behaves as a constant whatever its stored values.
    """
    ids = np.asarray(ids, dtype=np.int64)
    n = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise IndexError(f"take: ids outside [0, {n}) (min {ids.min()}, max {ids.max()})")

    def backward(g):
        full = np.zeros(table.shape)
        rows = g.reshape(-1, *table.shape[1:])
        flat = ids.reshape(-1)
        if padding_idx is not None:
            keep = flat != padding_idx
            flat, rows = flat[keep], rows[keep]
        np.add.at(full, flat, rows)
        return (full,)

    out = table.data[ids]
    if padding_idx is not None:
        out[ids == padding_idx] = 0.0
    return _node(out, (table,), backward, "take")


def embedding_bag(table: Tensor, ids: Array, weights: Array) -> Tensor:
    """``out[n] = sum_k weights[n, k] * table[ids[n, k]]`` for a 2-D table."""
    ids = np.asarray(ids, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    if ids.shape != weights.shape or ids.ndim != 2:
        raise DimensionError(f"embedding_bag: ids {ids.shape} / weights {weights.shape}")
    rows = table.data[ids]  # [N, K, d]
    out = np.einsum("nk,nkd->nd", weights, rows)

    def backward(g):
        full = np.zeros(table.shape)
        contrib = weights[:, :, None] * g[:, None, :]
        np.add.at(full, ids.reshape(-1), contrib.reshape(-1, table.shape[1]))
        return (full,)

    return _node(out, (table,), backward, "embedding_bag")


def mix(weights: Tensor, values: Tensor) -> Tensor:
    """Per-row convex mixing: ``out[n] = sum_e weights[n, e] * values[n, e]``."""
    if weights.ndim != 2 or values.ndim != 3 or values.shape[:2] != weights.shape:
        raise DimensionError(f"mix: weights {weights.shape} vs values {values.shape}")
    w, v = weights.data, values.data

    def backward(g):
        return np.einsum("nd,ned->ne", g, v), w[:, :, None] * g[:, None, :]

    return _node(np.einsum("ne,ned->nd", w, v), (weights, values), backward, "mix")


# ---------------------------------------------------------------------------
# softmax family


class SimplexMonitor:
    """Optional in-loop audit of every softmax output (debug flag)."""

    def __init__(self, tol: float = 1e-9):
        self.enabled = False
        self.tol = tol
        self.checks = 0
        self.rows = 0
        self.max_deviation = 0.0

    def reset(self) -> None:
        self.checks = self.rows = 0
        self.max_deviation = 0.0

    def observe(self, probs: Array, axis: int, what: str = "softmax") -> None:
        sums = probs.sum(axis=axis)
        dev = float(np.max(np.abs(sums - 1.0))) if sums.size else 0.0
        self.checks += 1
        self.rows += int(sums.size)
        self.max_deviation = max(self.max_deviation, dev)
        if dev > self.tol or (probs.size and probs.min() < 0.0) or not np.all(np.isfinite(probs)):
            raise NumericalError(f"{what} left the simplex (max |sum-1| = {dev:.3e})")


simplex_monitor = SimplexMonitor()


@contextlib.contextmanager
def check_simplex(tol: float = 1e-9):
    """Enable the simplex audit inside the block; yields the monitor."""
    prev = simplex_monitor.enabled, simplex_monitor.tol
    simplex_monitor.enabled, simplex_monitor.tol = True, tol
    simplex_monitor.reset()
    try:
        yield simplex_monitor
    finally:
        simplex_monitor.enabled, simplex_monitor.tol = prev


def _shifted(x: Array, axis: int) -> Array:
    top = np.max(x, axis=axis, keepdims=True)
    # x == top keeps +inf logits at 0 instead of inf - inf
    with np.errstate(invalid="ignore"):
        return np.where(x == top, 0.0, x - top)


def softmax(x: Tensor, axis: int = -1, what: str = "softmax") -> Tensor:
    if x.shape[axis] < 1:
        raise DimensionError("softmax over an empty axis")
    e = np.exp(_shifted(x.data, axis))
    out = e / e.sum(axis=axis, keepdims=True)
    if simplex_monitor.enabled:
        simplex_monitor.observe(out, axis, what)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _node(out, (x,), backward, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = _shifted(x.data, axis)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
    probs = np.exp(out)

    def backward(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return _node(out, (x,), backward, "log_softmax")


# ---------------------------------------------------------------------------
# pooling


def max_pool(x: Tensor, mask: Array | None = None) -> Tensor:
    """Max over the second-to-last axis, skipping rows where ``mask`` is False.

    ``x`` has shape ``[..., t, d]`` and ``mask`` ``[..., t]``. The gradient goes
    to the arg-max row, the first one on ties.
    """
    if x.ndim < 2:
        raise DimensionError(f"max_pool expects [..., t, d], got {x.shape}")
    if mask is None:
        mask = np.ones(x.shape[:-1], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape[:-1]:
        raise DimensionError(f"max_pool: mask {mask.shape} does not match {x.shape[:-1]}")
    if x.shape[-2] == 0 or not mask.any(axis=-1).all():
        raise EmptyPoolError("max_pool over an all-masked row set")
    masked = np.where(mask[..., None], x.data, -np.inf)
    idx = np.argmax(masked, axis=-2)[..., None, :]
    out = np.take_along_axis(x.data, idx, axis=-2)[..., 0, :]
    src = x.shape

    def backward(g):
        full = np.zeros(src)
        np.put_along_axis(full, idx, g[..., None, :], axis=-2)
        return (full,)

    return _node(out, (x,), backward, "max_pool")


def masked_mean(x: Tensor, mask: Array) -> Tensor:
    """Mean over the second-to-last axis restricted to ``mask``."""
    mask = np.asarray(mask, dtype=bool)
    counts = mask.sum(axis=-1)
    if not counts.all():
        raise EmptyPoolError("masked_mean over an all-masked row set")
    w = mask / counts[..., None]
    out = np.einsum("...t,...td->...d", w, x.data)

    def backward(g):
        return (w[..., None] * g[..., None, :],)

    return _node(out, (x,), backward, "masked_mean")


# ---------------------------------------------------------------------------
# verification oracle


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor] | Mapping[str, Tensor],
    eps: float = 1e-5,
    max_entries: int | None = None,
    seed: int = 0,
) -> float:
    """Largest ``|analytic - central difference| / max(1, |analytic|)``.

    ``f`` rebuilds the graph from the current parameter values on each call.
    With ``max_entries`` set, that many entries per parameter are sampled
    (seeded) instead of sweeping every entry.
    """
    tensors = list(params.values()) if isinstance(params, Mapping) else list(params)
    out = f()
    if out.data.size != 1:
        raise ContractError(f"grad_check needs a scalar-valued function, got shape {out.shape}")
    for p in tensors:
        p.zero_grad()
    out.backward()
    analytic = [np.zeros(p.shape) if p.grad is None else p.grad.copy() for p in tensors]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, a in zip(tensors, analytic):
        if not p.data.flags.c_contiguous:
            p.data = np.ascontiguousarray(p.data)
        flat = p.data.reshape(-1)
        entries: Iterable[int] = range(flat.size)
        if max_entries is not None and flat.size > max_entries:
            entries = rng.choice(flat.size, size=max_entries, replace=False)
        a_flat = a.reshape(-1)
        for i in entries:
            orig = flat[i]
            flat[i] = orig + eps
            up = float(f().data.reshape(-1)[0])
            flat[i] = orig - eps
            down = float(f().data.reshape(-1)[0])
            flat[i] = orig
            numeric = (up - down) / (2.0 * eps)
            err = abs(a_flat[i] - numeric) / max(1.0, abs(a_flat[i]))
            worst = max(worst, err)
    for p in tensors:
        p.zero_grad()
    return worst
