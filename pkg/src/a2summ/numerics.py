"""Dense tensors with tape-based reverse-mode autodiff on top of numpy.

Only the operations the model and its losses need are provided.  Every
differentiable op records itself on the active :class:`Tape` when at least one
input requires a gradient; :func:`backward` replays the tape in reverse.

Stored tensors default to float32.  Use :func:`precision` (or
:func:`set_default_dtype`) to switch to float64, e.g. for gradient checks.
Reductions accumulate in float64 regardless of the stored dtype.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterator, Sequence

import numpy as np

_DEFAULT_DTYPE = np.float32
_TAPES: list["Tape"] = []
_CORRUPT: set[str] = set()


class ShapeError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


def default_dtype():
    return _DEFAULT_DTYPE


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    _DEFAULT_DTYPE = dtype


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily change the default storage dtype."""
    old = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(old)


@contextlib.contextmanager
def corrupt_gradient(op_name: str) -> Iterator[None]:
    """Test hook: perturb the backward rule of one op by 1%."""
    _CORRUPT.add(op_name)
    try:
        yield
    finally:
        _CORRUPT.discard(op_name)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data)
        if dtype is None:
            dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else _DEFAULT_DTYPE
        self.data = np.asarray(arr, dtype=dtype, order="C")
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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_not_scalar(self)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

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
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _raise_not_scalar(t: Tensor):
    raise ShapeError(f"expected a single-element tensor, got shape {t.shape}")


def tensor(data, requires_grad: bool = False, name: str | None = None, dtype=None) -> Tensor:
    if dtype is None:
        dtype = _DEFAULT_DTYPE
    return Tensor(data, requires_grad=requires_grad, name=name, dtype=dtype)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=_DEFAULT_DTYPE))


class _Record:
    __slots__ = ("op", "inputs", "output", "backward")

    def __init__(self, op, inputs, output, backward):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Ordered log of differentiable operations.

    Use as a context manager; ops executed inside are recorded in execution
    order, which is already a topological order.
    """

    def __init__(self):
        self.records: list[_Record] = []
        self._produced: set[int] = set()
        self.consumed = False

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.records)

    def _record(self, op, inputs, output, backward) -> None:
        self.records.append(_Record(op, inputs, output, backward))
        self._produced.add(id(output))

    def produced(self, t: Tensor) -> bool:
        return id(t) in self._produced

    def reset(self) -> None:
        self.records.clear()
        self._produced.clear()
        self.consumed = False

    def backward(self, loss: Tensor) -> None:
        backward(loss, self)


def _wrap(op: str, out_data: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs, dtype=out_data.dtype)
    if needs and _TAPES:
        _TAPES[-1]._record(op, tuple(inputs), out, backward_fn)
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate ``.grad`` on every tensor reachable from ``loss`` on ``tape``.

    Leaf tensors (not produced on the tape) accumulate into an existing grad;
    intermediates are overwritten.  A tape can be replayed only once.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if tape.consumed:
        raise TapeError("tape already consumed by a previous backward; call reset()")
    if not tape.produced(loss):
        raise TapeError("loss was not produced under this tape")
    tape.consumed = True

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for rec in reversed(tape.records):
        g = grads.pop(id(rec.output), None)
        if g is None:
            continue
        rec.output.grad = g
        in_grads = rec.backward(g)
        if rec.op in _CORRUPT:
            in_grads = tuple(None if x is None else x * 1.01 for x in in_grads)
        for t, gi in zip(rec.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            gi = gi.astype(t.data.dtype, copy=False)
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
            if not tape.produced(t):
                leaves[key] = t
    for key, t in leaves.items():
        g = grads.pop(key)
        t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# elementwise -----------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _wrap("add", a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _wrap("sub", a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _wrap(
        "mul",
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _wrap("scale", a.data * a.data.dtype.type(c), (a,), lambda g: (g * c,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _wrap("exp", out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _wrap("log", np.log(ad), (a,), lambda g: (g / ad,))


def power(a: Tensor, p: float) -> Tensor:
    """Elementwise ``a**p`` for a constant exponent (inputs must be positive when p is fractional)."""
    ad = a.data
    p = float(p)
    if p == 0.0:
        return _wrap("power", np.ones_like(ad), (a,), lambda g: (np.zeros_like(g),))
    return _wrap("power", ad**p, (a,), lambda g: (g * p * ad ** (p - 1.0),))


def sigmoid(a: Tensor) -> Tensor:
    out = _stable_sigmoid(a.data)
    return _wrap("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """tanh-approximated GELU."""
    x = a.data
    x2 = x * x
    inner = _GELU_C * (x + 0.044715 * x2 * x)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def bw(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return _wrap("gelu", out, (a,), bw)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes only where the input was inside."""
    x = a.data
    inside = (x >= lo) & (x <= hi)
    return _wrap("clip", np.clip(x, lo, hi), (a,), lambda g: (g * inside,))


# shape -----------------------------------------------------------------------


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    return _wrap("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _wrap("transpose", np.asarray(a.data.transpose(axes), order="C"), (a,), lambda g: (g.transpose(inv),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _wrap("concat", np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


def gather(a: Tensor, index) -> Tensor:
    """``a[index]`` for numpy (fancy) indices; repeated indices accumulate."""
    shape, dtype = a.shape, a.data.dtype

    def bw(g):
        out = np.zeros(shape, dtype=dtype)
        np.add.at(out, index, g)
        return (out,)

    return _wrap("gather", np.asarray(a.data[index], order="C"), (a,), bw)


# reductions -------------------------------------------------------------------


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape, dtype = a.shape, a.data.dtype
    out = np.sum(a.data, axis=axis, keepdims=keepdims, dtype=np.float64).astype(dtype)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).astype(dtype),)

    return _wrap("sum", np.asarray(out), (a,), bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def masked_mean(a: Tensor, mask: np.ndarray, axis: int = -1) -> Tensor:
    """Mean over ``axis`` counting only entries where ``mask`` is true.

    Rows with no permitted entries yield 0.
    """
    m = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    count = m.sum(axis=axis, keepdims=True)
    w = (m / np.maximum(count, 1)).astype(a.data.dtype)
    return sum(mul(a, Tensor(w, dtype=a.data.dtype)), axis=axis)


def logsumexp(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp((x - m).astype(np.float64))
    s = e.sum(axis=axis, keepdims=True)
    out = (np.log(s) + m).astype(x.dtype)
    soft = (e / s).astype(x.dtype)
    return _wrap("logsumexp", np.squeeze(out, axis=axis), (a,), lambda g: (np.expand_dims(g, axis) * soft,))


# linear algebra / attention --------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _wrap("matmul", ad @ bd, (a, b), bw)


def masked_softmax(logits: Tensor, mask: np.ndarray) -> Tensor:
    """Softmax over the last axis restricted to entries where ``mask`` is true.

    Forbidden entries are exactly 0; all-false rows come out as all zeros.
    """
    x = logits.data
    m = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    neg = np.where(m, x, -np.inf)
    row_max = np.max(neg, axis=-1, keepdims=True)
    row_max = np.where(np.isfinite(row_max), row_max, 0.0)
    e = np.where(m, np.exp((x - row_max).astype(np.float64)), 0.0)
    denom = e.sum(axis=-1, keepdims=True)
    out = (e / np.where(denom > 0, denom, 1.0)).astype(x.dtype)

    def bw(g):
        dot = np.sum(g * out, axis=-1, keepdims=True, dtype=np.float64)
        return ((out * (g - dot)).astype(x.dtype),)

    return _wrap("masked_softmax", out, (logits,), bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply elementwise gain and bias."""
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True, dtype=np.float64)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xc * inv).astype(xd.dtype)
    gd = gain.data
    out = xhat * gd + bias.data
    n = xd.shape[-1]

    def bw(g):
        gh = g * gd
        gx = inv / n * (n * gh - gh.sum(-1, keepdims=True) - xhat * (gh * xhat).sum(-1, keepdims=True))
        gg = _unbroadcast(g * xhat, gd.shape)
        gb = _unbroadcast(g, bias.shape)
        return gx.astype(xd.dtype), gg, gb

    return _wrap("layer_norm", out, (x, gain, bias), bw)


def l2_normalize(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Scale each vector along the last axis to unit length."""
    xd = x.data
    norm = np.sqrt(np.sum(xd.astype(np.float64) ** 2, axis=-1, keepdims=True))
    norm = np.maximum(norm, eps)
    y = (xd / norm).astype(xd.dtype)

    def bw(g):
        dot = np.sum(g * y, axis=-1, keepdims=True, dtype=np.float64)
        return (((g - y * dot) / norm).astype(xd.dtype),)

    return _wrap("l2_normalize", y, (x,), bw)


# gradient checking -------------------------------------------------------------


def numerical_grad(f: Callable[[Tensor], Tensor], x: np.ndarray, step: float = 1e-4) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f(Tensor(x.copy(), dtype=np.float64)).item()
        flat[i] = orig - step
        fm = f(Tensor(x.copy(), dtype=np.float64)).item()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * step)
    return g


def grad_check(f: Callable[[Tensor], Tensor], x, step: float = 1e-4) -> float:
    """Max relative error between autodiff and central-difference gradients.

    ``f`` maps a tensor to a scalar tensor.  Runs in float64.
    """
    with precision(np.float64):
        x = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
        xt = Tensor(x.copy(), requires_grad=True, dtype=np.float64)
        with Tape() as tape:
            loss = f(xt)
        if tape.produced(loss):
            backward(loss, tape)
        g_ad = xt.grad if xt.grad is not None else np.zeros_like(x)
        g_fd = numerical_grad(f, x, step)
    denom = np.maximum(1e-8, np.abs(g_ad) + np.abs(g_fd))
    return float(np.max(np.abs(g_ad - g_fd) / denom)) if x.size else 0.0
