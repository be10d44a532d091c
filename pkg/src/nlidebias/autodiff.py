"""Small reverse-mode autodiff engine over numpy arrays.

Every op returns a :class:`Node`. Calling :func:`backward` on a scalar node
walks the reachable graph in decreasing creation order (a valid reverse
topological order, since parents are always created before children) and
accumulates gradients into ``Node.grad``.

Two special identity ops shape the gradient flow used by the adversarial
training methods:

* :func:`grl` passes values through unchanged and multiplies the incoming
  gradient by ``-lam`` on the way back.
* :func:`grl_block` passes values through unchanged and sends no gradient back.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

_counter = itertools.count()
_state = {"dtype": np.float32, "grad_enabled": True}


def get_default_dtype():
    return _state["dtype"]


def set_default_dtype(dtype) -> None:
    """Set the float dtype used for new nodes (float32 or float64)."""
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype!r}; use float32 or float64")
    _state["dtype"] = dtype


@contextlib.contextmanager
def default_dtype(dtype):
    old = _state["dtype"]
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _state["dtype"] = old


@contextlib.contextmanager
def no_grad():
    """Build constant nodes only: no parents, no backward rules."""
    old = _state["grad_enabled"]
    _state["grad_enabled"] = False
    try:
        yield
    finally:
        _state["grad_enabled"] = old


class ShapeError(ValueError):
    pass


class Node:
    """A value in the computation graph.

    ``grad`` always has the shape of ``value`` and starts at zero.
    ``requires_grad`` is true for trainable parameters and for anything
    computed from them; backward rules are only recorded for such nodes.
    """

    __slots__ = ("value", "grad", "parents", "op", "requires_grad",
                 "trainable", "index", "_backward", "_touched")

    def __init__(self, value, parents: Sequence["Node"] = (), op: str = "const",
                 backward_fn: Callable[[np.ndarray], None] | None = None,
                 trainable: bool = False):
        value = np.asarray(value)
        if value.dtype.kind != "f":
            value = value.astype(get_default_dtype())
        self.value = value
        self.grad = np.zeros_like(value)
        self.trainable = trainable
        self.requires_grad = trainable or (
            _state["grad_enabled"] and any(p.requires_grad for p in parents))
        if self.requires_grad and not trainable:
            self.parents = tuple(parents)
            self._backward = backward_fn
        else:
            self.parents = ()
            self._backward = None
        self.op = op
        self.index = next(_counter)
        self._touched = False

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)


class Parameter(Node):
    """A trainable leaf node with a name."""

    __slots__ = ("name",)

    def __init__(self, value, name: str, trainable: bool = True):
        super().__init__(np.array(value, dtype=get_default_dtype()), op="param",
                         trainable=trainable)
        self.name = name
        if not trainable:
            self.requires_grad = False

    def freeze(self) -> None:
        self.trainable = False
        self.requires_grad = False

    def unfreeze(self) -> None:
        self.trainable = True
        self.requires_grad = True

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape}, trainable={self.trainable})"


def as_node(x) -> Node:
    if isinstance(x, Node):
        return x
    return Node(np.asarray(x, dtype=get_default_dtype()))


def _accum(node: Node, g: np.ndarray) -> None:
    if not node.requires_grad:
        return
    node.grad += g
    node._touched = True


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_shape(op: str, a: Node, b: Node) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape("add", a, b)

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return Node(a.value + b.value, (a, b), "add", bw)


def sub(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape("sub", a, b)

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return Node(a.value - b.value, (a, b), "sub", bw)


def mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape("mul", a, b)

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.value, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.value, b.shape))

    return Node(a.value * b.value, (a, b), "mul", bw)


def absolute(a) -> Node:
    a = as_node(a)

    def bw(g):
        _accum(a, g * np.sign(a.value))

    return Node(np.abs(a.value), (a,), "abs", bw)


def tanh(a) -> Node:
    a = as_node(a)
    out = np.tanh(a.value)

    def bw(g):
        _accum(a, g * (1.0 - out * out))

    return Node(out, (a,), "tanh", bw)


def sigmoid(a) -> Node:
    a = as_node(a)
    x = a.value
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)

    def bw(g):
        _accum(a, g * out * (1.0 - out))

    return Node(out, (a,), "sigmoid", bw)


# ------------------------------------------------------------------ structure


def matmul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")

    def bw(g):
        if a.requires_grad:
            _accum(a, g @ b.value.T)
        if b.requires_grad:
            _accum(b, a.value.T @ g)

    return Node(a.value @ b.value, (a, b), "matmul", bw)


def concat(nodes: Sequence, axis: int = -1) -> Node:
    nodes = [as_node(n) for n in nodes]
    if not nodes:
        raise ShapeError("concat: no inputs")
    ndim = nodes[0].value.ndim
    ax = axis % ndim if ndim else 0
    for n in nodes[1:]:
        if n.value.ndim != ndim or any(
                n.shape[i] != nodes[0].shape[i] for i in range(ndim) if i != ax):
            raise ShapeError(
                f"concat: shapes {nodes[0].shape} and {n.shape} differ off axis {axis}")
    sizes = [n.shape[ax] for n in nodes]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        for n, lo, hi in zip(nodes, bounds[:-1], bounds[1:]):
            if n.requires_grad:
                sl = [slice(None)] * ndim
                sl[ax] = slice(lo, hi)
                _accum(n, g[tuple(sl)])

    return Node(np.concatenate([n.value for n in nodes], axis=ax), nodes, "concat", bw)


def stack(nodes: Sequence, axis: int = 0) -> Node:
    nodes = [as_node(n) for n in nodes]
    for n in nodes[1:]:
        if n.shape != nodes[0].shape:
            raise ShapeError(f"stack: shapes {nodes[0].shape} and {n.shape} differ")

    def bw(g):
        for i, n in enumerate(nodes):
            if n.requires_grad:
                _accum(n, np.take(g, i, axis=axis))

    return Node(np.stack([n.value for n in nodes], axis=axis), nodes, "stack", bw)


def index(a, key) -> Node:
    """Basic or integer-array indexing; gradients scatter-add back."""
    a = as_node(a)
    try:
        out = a.value[key]
    except IndexError as exc:
        raise ShapeError(f"index: {exc} for shape {a.shape}") from None

    def bw(g):
        full = np.zeros_like(a.value)
        np.add.at(full, key, g)
        _accum(a, full)

    return Node(out, (a,), "index", bw)


def embed(table, ids) -> Node:
    """Row lookup ``table[ids]`` for an integer array of any shape."""
    table = as_node(table)
    ids = np.asarray(ids)
    if table.value.ndim != 2:
        raise ShapeError(f"embed: table must be 2-d, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embed: index out of range for table {table.shape}")

    def bw(g):
        full = np.zeros_like(table.value)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        _accum(table, full)

    return Node(table.value[ids], (table,), "embed", bw)


def max_pool(states, mask) -> Node:
    """Max over time of ``states`` (B, T, D) where ``mask`` (B, T) is true.

    Masked positions never win and get no gradient. Ties go to the earliest
    position.
    """
    states = as_node(states)
    mask = np.asarray(mask, dtype=bool)
    if states.value.ndim != 3 or mask.shape != states.shape[:2]:
        raise ShapeError(f"max_pool: states {states.shape} and mask {mask.shape} do not conform")
    if not mask.any(axis=1).all():
        raise ShapeError("max_pool: a sequence has no unmasked positions")
    x = np.where(mask[:, :, None], states.value, -np.inf)
    arg = np.argmax(x, axis=1)  # (B, D), first occurrence on ties
    b_idx = np.arange(x.shape[0])[:, None]
    d_idx = np.arange(x.shape[2])[None, :]
    out = states.value[b_idx, arg, d_idx]

    def bw(g):
        full = np.zeros_like(states.value)
        full[b_idx, arg, d_idx] = g
        _accum(states, full)

    return Node(out, (states,), "max_pool", bw)


def softmax_xent(logits, labels, weights=None) -> Node:
    """Fused softmax cross-entropy.

    Returns the mean over rows, or ``sum(weights * per_row_loss)`` when
    ``weights`` is given.
    """
    logits = as_node(logits)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    z = logits.value
    if z.ndim != 2 or z.shape[0] != labels.shape[0]:
        raise ShapeError(f"softmax_xent: logits {z.shape} and labels {labels.shape} do not conform")
    if labels.size and (labels.min() < 0 or labels.max() >= z.shape[1]):
        raise ShapeError(f"softmax_xent: label out of range for {z.shape[1]} classes")
    n = z.shape[0]
    if weights is None:
        w = np.full(n, 1.0 / n, dtype=z.dtype)
    else:
        w = np.asarray(weights, dtype=z.dtype).reshape(-1)
        if w.shape[0] != n:
            raise ShapeError(f"softmax_xent: weights {w.shape} and logits {z.shape} do not conform")
    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    per_row = lse - shifted[rows, labels]
    loss = np.asarray((w * per_row).sum(), dtype=z.dtype)

    def bw(g):
        p = np.exp(shifted - lse[:, None])
        p[rows, labels] -= 1.0
        _accum(logits, (g * w)[:, None] * p)

    return Node(loss, (logits,), "softmax_xent", bw)


# --------------------------------------------------------- gradient reversal


def grl(x, lam: float) -> Node:
    """Identity forward; backward multiplies the gradient by ``-lam``."""
    if lam < 0:
        raise ValueError(f"grl: lambda must be non-negative, got {lam}")
    x = as_node(x)
    factor = -float(lam)

    def bw(g):
        _accum(x, factor * g)

    return Node(x.value, (x,), f"grl({lam})", bw)


def grl_block(x) -> Node:
    """Identity forward; no gradient flows back to ``x``."""
    x = as_node(x)

    def bw(g):
        pass

    return Node(x.value, (x,), "grl_block", bw)


# -------------------------------------------------------------------- driving


def _reachable(root: Node) -> list[Node]:
    seen = {id(root)}
    order = [root]
    stack_ = [root]
    while stack_:
        n = stack_.pop()
        for p in n.parents:
            if id(p) not in seen and p.requires_grad:
                seen.add(id(p))
                order.append(p)
                stack_.append(p)
    order.sort(key=lambda n: n.index, reverse=True)
    return order


def backward(loss: Node) -> dict[str, np.ndarray]:
    """Backpropagate from a scalar ``loss``.

    Gradients add into ``.grad`` of every reachable node. Returns a map from
    parameter name to its gradient array.
    """
    if loss.value.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    nodes = _reachable(loss)
    loss.grad = loss.grad + np.ones_like(loss.value)
    loss._touched = True
    grads = {}
    for n in nodes:
        if n._backward is not None and n._touched:
            n._backward(n.grad)
        if isinstance(n, Parameter):
            grads[n.name] = n.grad
    return grads


def zero_grad(params: Iterable[Node]) -> None:
    for p in params:
        p.grad = np.zeros_like(p.value)
        p._touched = False


def sgd_step(params: Iterable[Parameter], lr: float) -> None:
    """In-place ``p -= lr * grad`` for trainable params, then clear grads."""
    params = list(params)
    for p in params:
        if p.trainable:
            p.value = p.value - p.value.dtype.type(lr) * p.grad
    zero_grad(params)


def clip_grad_norm(params: Iterable[Parameter], max_norm: float) -> float:
    params = [p for p in params if p.trainable]
    total = float(np.sqrt(sum(float((p.grad.astype(np.float64) ** 2).sum()) for p in params)))
    if total > max_norm > 0:
        scale = max_norm / total
        for p in params:
            p.grad = p.grad * p.grad.dtype.type(scale)
    return total
