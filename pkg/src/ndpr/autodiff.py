"""Dense rank-<=2 tensors with a reverse-mode tape and an Adam optimizer.

Every op computes its forward value eagerly with numpy (float64).  When a
:class:`Tape` is active and at least one input requires a gradient, the op is
appended to the tape together with a closure mapping the output gradient to
input gradients.  :func:`backward` replays the tape in reverse.
"""

from __future__ import annotations

import contextvars
import math
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64

_active_tape: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar(
    "ndpr_active_tape", default=None
)


class ShapeError(ValueError):
    """Raised when op inputs do not conform to the op signature."""

    def __init__(self, op: str, *shapes, detail: str = ""):
        shape_txt = ", ".join(str(tuple(s)) for s in shapes)
        msg = f"{op}: incompatible shapes {shape_txt}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)


class NumericalError(ArithmeticError):
    """Raised when an op produces NaN or Inf."""

    def __init__(self, op: str):
        super().__init__(f"{op}: non-finite value in output")
        self.op = op


class Tensor:
    """A float64 array of rank 0, 1 or 2 with optional history.

    ``node`` is the index of the producing op in ``tape`` and is ``None`` for
    constants and parameters (leaves).
    """

    __slots__ = ("data", "requires_grad", "node", "tape", "__weakref__")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=DTYPE)
        if arr.ndim > 2:
            raise ShapeError("tensor", arr.shape, detail="rank must be <= 2")
        if 0 in arr.shape:
            raise ShapeError("tensor", arr.shape, detail="dims must be >= 1")
        if not np.isfinite(arr).all():
            raise NumericalError("tensor")
        self.data = arr
        self.requires_grad = requires_grad
        self.node: int | None = None
        self.tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item", self.shape, detail="tensor is not a scalar")
        return float(self.data.reshape(-1)[0])

    def __len__(self) -> int:
        return self.data.shape[0]

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

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

    def __neg__(self):
        return affine(self, -1.0, 0.0)


class Parameter(Tensor):
    """A trainable leaf tensor with its gradient accumulator and Adam state."""

    __slots__ = ("name", "grad", "adam_m", "adam_v", "adam_t")

    def __init__(self, name: str, data):
        super().__init__(np.array(data, dtype=DTYPE), requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)
        self.adam_m = np.zeros_like(self.data)
        self.adam_v = np.zeros_like(self.data)
        self.adam_t = 0

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


class _Record:
    __slots__ = ("kind", "inputs", "output", "backward")

    def __init__(self, kind, inputs, output, backward):
        self.kind = kind
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Ordered record of executed ops; use as a context manager.

    Records are appended in execution order, so the list is topologically
    sorted by construction.
    """

    def __init__(self):
        self.records: list[_Record] = []
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _active_tape.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.records)

    def kinds(self) -> list[str]:
        return [r.kind for r in self.records]


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def custom_op(kind: str, out: np.ndarray, inputs: Sequence[Tensor],
              backward: Callable) -> Tensor:
    """Record a hand-written op; ``backward(g)`` returns one gradient per input."""
    if not np.isfinite(out).all():
        raise NumericalError(kind)
    result = Tensor.__new__(Tensor)
    result.data = out
    result.node = None
    result.tape = None
    tape = _active_tape.get()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    result.requires_grad = needs
    if needs:
        result.node = len(tape.records)
        result.tape = tape
        tape.records.append(_Record(kind, tuple(inputs), result, backward))
    return result


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.data.shape == b.data.shape:
        return
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return custom_op("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return custom_op("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    ad, bd = a.data, b.data
    return custom_op("mul", ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def affine(a, scale: float, shift: float = 0.0) -> Tensor:
    """``scale * a + shift`` for python scalars."""
    a = as_tensor(a)
    return custom_op("affine", a.data * scale + shift, (a,), lambda g: (g * scale,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return custom_op("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = stable_sigmoid(a.data)
    return custom_op("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def stable_sigmoid(x: np.ndarray) -> np.ndarray:
    # the tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def log(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    with np.errstate(divide="ignore"):
        out = np.log(x)
    return custom_op("log", out, (a,), lambda g: (g / x,))


# ---------------------------------------------------------------------------
# linear algebra and reductions


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim == 0 or b.data.ndim == 0 or a.shape[-1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    ad, bd = a.data, b.data

    def backward(g):
        if ad.ndim == 1 and bd.ndim == 1:
            return g * bd, g * ad
        if ad.ndim == 1:
            return bd @ g, np.outer(ad, g)
        if bd.ndim == 1:
            return np.outer(g, bd), ad.T @ g
        return g @ bd.T, ad.T @ g

    return custom_op("matmul", ad @ bd, (a, b), backward)


def dot(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 1 or a.shape != b.shape:
        raise ShapeError("dot", a.shape, b.shape, detail="expects equal-length vectors")
    ad, bd = a.data, b.data
    return custom_op("dot", np.asarray(ad @ bd), (a, b), lambda g: (g * bd, g * ad))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return custom_op("transpose", a.data.T, (a,), lambda g: (g.T,))


def total(a) -> Tensor:
    """Sum of all entries, as a scalar."""
    a = as_tensor(a)
    shape = a.shape
    return custom_op("sum", np.asarray(a.data.sum()), (a,),
                 lambda g: (np.broadcast_to(g, shape).copy(),))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    """Concatenate vectors end to end, or matrices along ``axis``."""
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat", detail="no inputs")
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError("concat", *[t.shape for t in ts], detail=f"axis={axis}") from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return custom_op("concat", out, ts, lambda g: tuple(np.split(g, bounds, axis=axis)))


def take_rows(table, ids) -> Tensor:
    """Gather rows of a matrix (embedding lookup); repeated ids accumulate."""
    table = as_tensor(table)
    idx = np.asarray(ids, dtype=np.intp)
    if table.data.ndim != 2 or idx.ndim != 1 or idx.size == 0:
        raise ShapeError("take_rows", table.shape, idx.shape)
    if idx.min() < 0 or idx.max() >= table.shape[0]:
        raise ShapeError("take_rows", table.shape, idx.shape, detail="row index out of range")
    shape = table.shape

    def backward(g):
        grad = np.zeros(shape, dtype=DTYPE)
        np.add.at(grad, idx, g)
        return (grad,)

    return custom_op("take_rows", table.data[idx], (table,), backward)


embedding = take_rows


def slice_rows(a, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    if a.data.ndim != 2 or not 0 <= start < stop <= a.shape[0]:
        raise ShapeError("slice_rows", a.shape, detail=f"rows {start}:{stop}")
    shape = a.shape

    def backward(g):
        grad = np.zeros(shape, dtype=DTYPE)
        grad[start:stop] = g
        return (grad,)

    return custom_op("slice_rows", a.data[start:stop], (a,), backward)


def slice_cols(a, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    if a.data.ndim != 2 or not 0 <= start < stop <= a.shape[1]:
        raise ShapeError("slice_cols", a.shape, detail=f"cols {start}:{stop}")
    shape = a.shape

    def backward(g):
        grad = np.zeros(shape, dtype=DTYPE)
        grad[:, start:stop] = g
        return (grad,)

    return custom_op("slice_cols", a.data[:, start:stop], (a,), backward)


def weighted_sum(weights, vectors) -> Tensor:
    """``sum_i weights[i] * vectors[i]``; with matrix weights, one sum per row."""
    weights, vectors = as_tensor(weights), as_tensor(vectors)
    if vectors.data.ndim != 2 or weights.shape[-1] != vectors.shape[0]:
        raise ShapeError("weighted_sum", weights.shape, vectors.shape)
    wd, vd = weights.data, vectors.data

    def backward(g):
        if wd.ndim == 1:
            return vd @ g, np.outer(wd, g)
        return g @ vd.T, wd.T @ g

    return custom_op("weighted_sum", wd @ vd, (weights, vectors), backward)


# ---------------------------------------------------------------------------
# normalisation, dropout, loss


def _segment_starts(lengths, width: int, op: str, shape) -> np.ndarray:
    lengths = np.asarray(lengths, dtype=np.intp)
    if lengths.size == 0 or lengths.min() < 1 or lengths.sum() != width:
        raise ShapeError(op, shape, detail=f"segments {lengths.tolist()} do not tile {width}")
    return np.concatenate(([0], np.cumsum(lengths)[:-1])), lengths


def softmax(a, segments: Sequence[int] | None = None, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis (per row for matrices).

    With ``segments`` (lengths tiling the last axis) each contiguous segment is
    normalised on its own.  With a boolean ``mask`` only allowed entries take
    part; masked entries, and rows with nothing allowed, come out as zero.
    """
    a = as_tensor(a)
    x = a.data
    if x.ndim == 0:
        raise ShapeError("softmax", x.shape)
    if segments is not None and mask is not None:
        raise ValueError("softmax: pass either segments or mask, not both")
    if segments is None:
        if mask is None:
            e = np.exp(x - x.max(axis=-1, keepdims=True))
            out = e / e.sum(axis=-1, keepdims=True)
        else:
            mask = np.asarray(mask, dtype=bool)
            if mask.shape != x.shape:
                raise ShapeError("softmax", x.shape, mask.shape, detail="mask shape")
            shifted = np.where(mask, x, -np.inf)
            top = shifted.max(axis=-1, keepdims=True)
            e = np.exp(shifted - np.where(np.isfinite(top), top, 0.0))
            total = e.sum(axis=-1, keepdims=True)
            out = np.divide(e, total, out=np.zeros_like(e), where=total > 0)

        def backward(g):
            return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

        return custom_op("softmax", out, (a,), backward)

    starts, lengths = _segment_starts(segments, x.shape[-1], "softmax", x.shape)
    axis = x.ndim - 1
    seg_max = np.maximum.reduceat(x, starts, axis=axis)
    e = np.exp(x - np.repeat(seg_max, lengths, axis=axis))
    out = e / np.repeat(np.add.reduceat(e, starts, axis=axis), lengths, axis=axis)

    def seg_backward(g):
        inner = np.add.reduceat(g * out, starts, axis=axis)
        return (out * (g - np.repeat(inner, lengths, axis=axis)),)

    return custom_op("softmax", out, (a,), seg_backward)


def dropout(a, rate: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; the identity unless ``train`` and ``rate > 0``."""
    a = as_tensor(a)
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return a
    if rng is None:
        raise ValueError("dropout in train mode needs a random generator")
    mask = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return custom_op("dropout", a.data * mask, (a,), lambda g: (g * mask,))


def nll(probs, gold: Sequence[int]) -> Tensor:
    """``-sum_n log probs[n, gold[n]]`` for a matrix of row distributions."""
    probs = as_tensor(probs)
    gold = np.asarray(gold, dtype=np.intp)
    p = probs.data
    if p.ndim != 2 or gold.shape != (p.shape[0],):
        raise ShapeError("nll", p.shape, gold.shape)
    if gold.min() < 0 or gold.max() >= p.shape[1]:
        raise ShapeError("nll", p.shape, gold.shape, detail="gold index out of range")
    rows = np.arange(p.shape[0])
    picked = p[rows, gold]
    with np.errstate(divide="ignore"):
        out = np.asarray(-np.log(picked).sum())

    def backward(g):
        grad = np.zeros_like(p)
        grad[rows, gold] = -g / picked
        return (grad,)

    return custom_op("nll", out, (probs,), backward)


# ---------------------------------------------------------------------------
# reverse pass and optimizer


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(param) into every reachable Parameter's ``grad``.

    Parameters off every path to ``loss`` keep their current (normally zero)
    gradient.
    """
    if loss.data.size != 1:
        raise ShapeError("backward", loss.shape, detail="loss must be a scalar")
    if not loss.requires_grad or loss.tape is None:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    records = loss.tape.records
    for rec in reversed(records[: loss.node + 1]):
        g = grads.pop(id(rec.output), None)
        if g is None:
            continue
        for inp, gi in zip(rec.inputs, rec.backward(g)):
            if not inp.requires_grad:
                continue
            if isinstance(inp, Parameter):
                inp.grad += gi
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi


class Adam:
    """Adam with bias correction; zeroes gradients after each step.

    Values, gradients and moments of all parameters are packed into flat
    buffers (each Parameter keeps views into them) so one step is a handful of
    vectorised operations.
    """

    def __init__(self, params: Iterable[Parameter], lr: float = 3e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 clip_norm: float | None = None):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.clip_norm = clip_norm
        self.t = max((p.adam_t for p in self.params), default=0)
        size = sum(p.data.size for p in self.params)
        self._data, self._grad = np.empty(size), np.empty(size)
        self._m, self._v = np.empty(size), np.empty(size)
        self._tmp = np.empty(size)
        offset = 0
        for p in self.params:
            n, shape = p.data.size, p.data.shape
            views = []
            for flat, arr in ((self._data, p.data), (self._grad, p.grad),
                              (self._m, p.adam_m), (self._v, p.adam_v)):
                flat[offset:offset + n] = arr.reshape(-1)
                views.append(flat[offset:offset + n].reshape(shape))
            p.data, p.grad, p.adam_m, p.adam_v = views
            offset += n

    def zero_grad(self) -> None:
        self._grad.fill(0.0)

    def grad_norm(self) -> float:
        return float(np.sqrt(self._grad @ self._grad))

    def step(self) -> None:
        g = self._grad
        if self.clip_norm is not None:
            norm = self.grad_norm()
            if norm > self.clip_norm:
                g = g * (self.clip_norm / norm)
        self.t += 1
        for p in self.params:
            p.adam_t = self.t
        b1, b2 = self.beta1, self.beta2
        m, v, tmp = self._m, self._v, self._tmp
        m *= b1
        np.multiply(g, 1.0 - b1, out=tmp)
        m += tmp
        v *= b2
        np.multiply(g, g, out=tmp)
        tmp *= 1.0 - b2
        v += tmp
        # lr * m_hat / (sqrt(v_hat) + eps) with the bias corrections folded in
        np.sqrt(v, out=tmp)
        tmp *= 1.0 / math.sqrt(1.0 - b2 ** self.t)
        tmp += self.eps
        np.divide(m, tmp, out=tmp)
        tmp *= self.lr / (1.0 - b1 ** self.t)
        self._data -= tmp
        self._grad.fill(0.0)


def uniform_init(rng: np.random.Generator, shape, scale: float = 0.08) -> np.ndarray:
    return rng.uniform(-scale, scale, size=shape)
