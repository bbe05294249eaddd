"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations run eagerly on numpy arrays. While a :class:`Tape` is active, every
operation whose inputs need gradients is appended to it together with a
vector-Jacobian closure; :func:`backward` replays the tape in reverse.

    >>> with Tape() as tape:
    ...     x = Tensor([1.0, 2.0], requires_grad=True)
    ...     loss = (x * x).sum() * 0.5
    >>> grads = backward(loss, tape)
    >>> x.grad
    array([1., 2.])
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "DimensionError",
    "DegenerateRowError",
    "backward",
    "as_tensor",
    "matmul",
    "masked_softmax",
    "softmax",
    "masked_mse",
    "concat",
    "stack",
    "where_const",
    "logsumexp",
    "mean_pool",
]


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class DegenerateRowError(ValueError):
    """A softmax row has no admissible position."""


_TAPES: list["Tape"] = []


class Tape:
    """Ordered record of primitive applications.

    Nodes are appended in execution order, so inputs always precede the
    node that consumes them. A tape is single-owner; build a fresh one for
    every forward pass.
    """

    def __init__(self) -> None:
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def record(self, out: "Tensor", inputs: tuple["Tensor", ...], vjp: Callable) -> None:
        self.nodes.append((out, inputs, vjp))

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)


def _active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


class Tensor:
    """A float64 array that may participate in differentiation."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # arithmetic -----------------------------------------------------------

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def swapaxes(self, a: int, b: int):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return transpose(self, tuple(axes))

    @property
    def T(self):
        return self.swapaxes(-1, -2)

    def sin(self):
        return sin(self)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data, dtype=np.float64)
    out.requires_grad = needs
    out.grad = None
    out.name = None
    tape = _active_tape()
    if needs and tape is not None:
        tape.record(out, tuple(inputs), vjp)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# elementwise ------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "add")
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "mul")
    ad, bd = a.data, b.data
    return _make(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "div")
    ad, bd = a.data, b.data
    out = ad / bd
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)),
    )


def sin(a: Tensor) -> Tensor:
    x = a.data
    return _make(np.sin(x), (a,), lambda g: (g * np.cos(x),))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _make(y, (a,), lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    x = a.data
    return _make(np.log(x), (a,), lambda g: (g / x,))


def sqrt(a: Tensor) -> Tensor:
    y = np.sqrt(a.data)
    return _make(y, (a,), lambda g: (g * 0.5 / y,))


def where_const(cond: np.ndarray, a: Tensor, fill: float = 0.0) -> Tensor:
    """``a`` where ``cond`` holds, the constant ``fill`` elsewhere."""
    cond = np.asarray(cond, dtype=bool)
    shape = a.shape
    return _make(
        np.where(cond, a.data, fill),
        (a,),
        lambda g: (_unbroadcast(np.where(cond, g, 0.0), shape),),
    )


# reductions and shape ---------------------------------------------------------


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(out, dtype=np.float64), (a,), vjp)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([a.shape[i] for i in axes]))
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def broadcast_to(a: Tensor, shape) -> Tensor:
    old = a.shape
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError:
        raise DimensionError(f"broadcast_to: cannot broadcast {old} to {tuple(shape)}") from None
    return _make(out, (a,), lambda g: (_unbroadcast(g, old),))


def getitem(a: Tensor, index) -> Tensor:
    shape = a.shape

    basic = _is_basic(index)

    def vjp(g):
        full = np.zeros(shape)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _make(np.array(a.data[index]), (a,), vjp)


def _is_basic(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (int, slice, type(Ellipsis), type(None))) for p in parts)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise DimensionError(f"concat: incompatible shapes {shapes} along axis {axis}") from None
    return _make(out, tuple(tensors), lambda g: tuple(np.split(g, cuts, axis=axis)))


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)
    n = len(tensors)
    return _make(
        out,
        tuple(tensors),
        lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)),
    )


# linear algebra ---------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes, batch axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul: batch shapes of {a.shape} and {b.shape} differ") from None
    ad, bd = a.data, b.data

    def vjp(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _make(ad @ bd, (a, b), vjp)


# softmax family ---------------------------------------------------------------


def masked_softmax(scores: Tensor, mask) -> Tensor:
    """Softmax over the last axis restricted to positions where ``mask`` holds.

    ``mask`` must broadcast against ``scores``; the output takes the broadcast
    shape. Masked positions are exactly zero. Every row needs at least one
    admissible position.
    """
    scores = as_tensor(scores)
    mask = np.asarray(mask, dtype=bool)
    try:
        shape = np.broadcast_shapes(scores.shape, mask.shape)
    except ValueError:
        raise DimensionError(
            f"masked_softmax: scores {scores.shape} and mask {mask.shape} do not broadcast"
        ) from None
    s = np.broadcast_to(scores.data, shape)
    m = np.broadcast_to(mask, shape)
    live = m.any(axis=-1)
    if not live.all():
        bad = tuple(int(i) for i in np.argwhere(~live)[0])
        raise DegenerateRowError(f"masked_softmax: row {bad} is fully masked")
    shifted = np.where(m, s, -np.inf)
    shifted = shifted - shifted.max(axis=-1, keepdims=True)
    e = np.where(m, np.exp(shifted), 0.0)
    y = e / e.sum(axis=-1, keepdims=True)
    src = scores.shape

    def vjp(g):
        gs = y * (g - (g * y).sum(axis=-1, keepdims=True))
        return (_unbroadcast(gs, src),)

    return _make(y, (scores,), vjp)


def masked_attention_pool(scores: Tensor, mask, values) -> Tensor:
    """Per-channel attention means.

    ``scores`` (..., K, T), constant ``mask`` and ``values`` (..., D, T).
    Returns (..., K, D) with entry ``[k, d]`` equal to
    ``sum_t masked_softmax(scores[k], mask[d])[t] * values[d, t]``, computed
    as two matrix products instead of materializing the (K, D, T) weights.
    """
    scores = as_tensor(scores)
    m = np.asarray(mask, dtype=np.float64)
    x = np.where(m > 0, np.asarray(values, dtype=np.float64), 0.0)
    if not (m.sum(axis=-1) > 0).all():
        raise DegenerateRowError("masked_attention_pool: a channel has no admissible position")
    s = scores.data
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    den = e @ np.swapaxes(m, -1, -2)
    if den.min() < 1e-250:
        # the shared shift underflowed for some channel: take the exact route
        attn = masked_softmax(scores[..., None, :], (m > 0)[..., None, :, :])
        return (attn * x[..., None, :, :]).sum(axis=-1)
    y = (e @ np.swapaxes(x, -1, -2)) / den
    src = scores.shape

    def vjp(g):
        g1 = g / den
        gs = e * (g1 @ x - (g1 * y) @ m)
        return (_unbroadcast(gs, src),)

    return _make(y, (scores,), vjp)


def softmax(scores: Tensor) -> Tensor:
    return masked_softmax(scores, np.ones(scores.shape[-1:], dtype=bool))


def logsumexp(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    m = x.max(axis=axis, keepdims=True)
    e = np.exp(x - m)
    s = e.sum(axis=axis, keepdims=True)
    out = (np.log(s) + m).squeeze(axis)
    p = e / s
    return _make(out, (a,), lambda g: (np.expand_dims(g, axis) * p,))


# losses and pooling -----------------------------------------------------------


def masked_mse(pred: Tensor, target, mask) -> Tensor:
    """Mean of squared errors over cells where ``mask`` holds.

    Returns 0 when no cell is selected. Values at unselected cells never
    reach the result or its gradient.
    """
    pred = as_tensor(pred)
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), pred.shape)
    count = int(mask.sum())
    diff = np.where(mask, pred.data - target, 0.0)
    denom = max(count, 1)
    out = np.asarray((diff * diff).sum() / denom)
    return _make(out, (pred,), lambda g: (g * 2.0 * diff / denom,))


def mean_pool(x: Tensor, weights) -> Tensor:
    """Weighted average of rows: ``weights @ x`` with row-normalized weights.

    ``weights`` is a constant (..., M, T) array of nonnegative membership
    weights; rows summing to zero produce zeros.
    """
    w = np.asarray(weights, dtype=np.float64)
    tot = w.sum(axis=-1, keepdims=True)
    w = np.divide(w, tot, out=np.zeros_like(w), where=tot > 0)
    return matmul(Tensor(w), x)


# differentiation --------------------------------------------------------------


def backward(loss: Tensor, tape: Tape) -> dict[int, np.ndarray]:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf needing it.

    Returns a mapping from ``id(tensor)`` to its gradient for all tensors the
    loss depends on.
    """
    if loss.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    produced = {id(out) for out, _, _ in tape.nodes}
    if id(loss) not in produced and not loss.requires_grad:
        raise ValueError("backward: loss is not reachable from any recorded node")
    leaves: dict[int, Tensor] = {}
    for out, inputs, vjp in reversed(tape.nodes):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for inp, gi in zip(inputs, vjp(g)):
            if not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = np.asarray(gi, dtype=np.float64)
            if key not in produced:
                leaves[key] = inp
    if loss.requires_grad and id(loss) not in produced:
        leaves[id(loss)] = loss
    for key, leaf in leaves.items():
        g = grads[key]
        leaf.grad = g if leaf.grad is None else leaf.grad + g
    return {k: grads[k] for k in leaves}
