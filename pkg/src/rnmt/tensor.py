"""Dense tensors with tape-based reverse-mode differentiation.

Forward ops run eagerly on numpy arrays. When a :class:`Tape` is active and
at least one input requires a gradient, the op is appended to the tape
together with a closure mapping the output gradient to input gradients.
Outside a tape every op is a plain numpy computation, which is what the
decoders and finite-difference checks rely on.
"""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError, ParameterError

_state = threading.local()
_DEFAULT_DTYPE = np.float64


def get_default_dtype():
    return getattr(_state, "dtype", _DEFAULT_DTYPE)


def set_default_dtype(dtype) -> None:
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ParameterError(f"unsupported float dtype {dtype}")
    _state.dtype = dtype.type


@contextlib.contextmanager
def default_dtype(dtype):
    old = get_default_dtype()
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = old


class RngState:
    """Seeded PCG64 stream; identical seeds give identical samples."""

    algorithm = "PCG64"

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.generator = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, low, high, shape, dtype=None):
        dtype = dtype or get_default_dtype()
        return self.generator.uniform(low, high, size=shape).astype(dtype)

    def random(self, shape):
        return self.generator.random(size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def integers(self, low, high, size=None):
        return self.generator.integers(low, high, size=size)


class Tensor:
    """A float array that may participate in a differentiation tape."""

    __slots__ = ("data", "grad", "requires_grad", "node_id", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(get_default_dtype())
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.node_id = None
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.grad = None
        t.requires_grad = False
        t.node_id = None
        t.name = None
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label})"

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

    def __truediv__(self, other):
        return div(self, other)

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

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype) if dtype is not None else x)


# --------------------------------------------------------------------------
# tape


@dataclass
class _Record:
    out: Tensor
    inputs: tuple
    backward: Callable


class Tape:
    """Ordered record of differentiable ops executed while active.

    Use as a context manager; ``backward`` may run once per tape.
    """

    def __init__(self):
        self.records: list[_Record] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        stack = _tape_stack()
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack().pop()

    def __len__(self) -> int:
        return len(self.records)

    def record(self, out: Tensor, inputs: tuple, backward: Callable) -> None:
        out.node_id = len(self.records)
        out.requires_grad = True
        self.records.append(_Record(out, inputs, backward))

    def backward(self, loss: Tensor, params: Iterable[Tensor] | None = None) -> None:
        if self.consumed:
            raise ContractError("backward already ran on this tape; run a new forward pass")
        if loss.data.size != 1:
            raise ContractError(f"loss must be a scalar, got shape {loss.shape}")
        if params is not None:
            for p in params:
                p.grad = np.zeros_like(p.data)
        self.consumed = True
        if not loss.requires_grad:
            return
        if loss.node_id is None:
            loss.grad = _accumulate(loss.grad, np.ones_like(loss.data))
            return
        grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
        for rec in reversed(self.records):
            g = grads.pop(rec.out.node_id, None)
            if g is None:
                continue
            in_grads = rec.backward(g)
            for inp, gi in zip(rec.inputs, in_grads):
                if gi is None or not inp.requires_grad:
                    continue
                if inp.node_id is None:
                    inp.grad = _accumulate(inp.grad, gi)
                else:
                    prev = grads.get(inp.node_id)
                    grads[inp.node_id] = gi if prev is None else prev + gi


def _accumulate(prev, g):
    if prev is None:
        return np.array(g, copy=True)
    return prev + g


def _tape_stack() -> list:
    stack = getattr(_state, "tapes", None)
    if stack is None:
        stack = _state.tapes = []
    return stack


def active_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


@contextlib.contextmanager
def no_tape():
    """Suspend recording (used for finite differences and inference)."""
    stack = _tape_stack()
    saved = list(stack)
    stack.clear()
    try:
        yield
    finally:
        stack.extend(saved)


def backward(loss: Tensor, tape: Tape, params: Iterable[Tensor] | None = None) -> None:
    tape.backward(loss, params)


def apply_op(out_data: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap ``out_data`` as the result of a differentiable op.

    ``backward_fn(g)`` must return one gradient (or None) per input.
    """
    if not np.isfinite(out_data).all():
        raise NumericError("non-finite value produced by forward op")
    out = Tensor._wrap(out_data)
    tape = active_tape()
    if tape is not None:
        for t in inputs:
            if t.requires_grad:
                tape.record(out, tuple(inputs), backward_fn)
                break
    return out


# --------------------------------------------------------------------------
# broadcasting helpers


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _binary_shape(a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise DimensionError(f"cannot broadcast {a.shape} with {b.shape}") from exc


# --------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _binary_shape(a, b)
    sa, sb = a.shape, b.shape
    return apply_op(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _binary_shape(a, b)
    sa, sb = a.shape, b.shape
    return apply_op(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _binary_shape(a, b)
    ad, bd = a.data, b.data
    return apply_op(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _binary_shape(a, b)
    ad, bd = a.data, b.data
    out = ad / bd
    return apply_op(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)),
    )


def neg(x: Tensor) -> Tensor:
    return apply_op(-x.data, (x,), lambda g: (-g,))


def _pair(a, b):
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    if isinstance(b, Tensor):
        return as_tensor(a, like=b), b
    return as_tensor(a), as_tensor(b)


# --------------------------------------------------------------------------
# nonlinearities


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return apply_op(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return apply_op(y, (x,), lambda g: (g * y * (1.0 - y),))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return apply_op(y, (x,), lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    xd = x.data
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(xd)
    return apply_op(y, (x,), lambda g: (g / xd,))


def leaky_relu(x: Tensor, slope: float = 0.1) -> Tensor:
    """max(x, slope*x); the derivative at exactly 0 is taken as 1."""
    if not 0.0 < slope < 1.0:
        raise ParameterError(f"leaky slope must lie in (0, 1), got {slope}")
    xd = x.data
    scale = np.where(xd >= 0, 1.0, slope).astype(xd.dtype)
    return apply_op(xd * scale, (x,), lambda g: (g * scale,))


def softmax(x: Tensor, axis: int = -1, mask=None) -> Tensor:
    """Exp-normalise along ``axis``; masked-out entries are exactly zero.

    ``mask`` is a boolean array broadcastable to ``x`` (True = keep).
    """
    xd = x.data
    if mask is None:
        z = xd - xd.max(axis=axis, keepdims=True)
        e = np.exp(z)
    else:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), xd.shape)
        filled = np.where(mask, xd, -np.inf)
        m = filled.max(axis=axis, keepdims=True)
        if not np.isfinite(m).all():
            raise ContractError("softmax row is fully masked")
        e = np.where(mask, np.exp(np.where(mask, xd - m, 0.0)), 0.0).astype(xd.dtype)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return apply_op(y, (x,), back)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    xd = x.data
    m = xd.max(axis=axis, keepdims=True)
    z = xd - m
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse

    def back(g):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)

    return apply_op(y, (x,), back)


# --------------------------------------------------------------------------
# linear algebra and reductions


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes, broadcasting leading axes.

    A 1-D right operand is treated as a column and squeezed from the result.
    Row-batched 2-D products are evaluated row by row so that each output
    row is bit-identical no matter how many rows share the call.
    """
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 1:
        raise DimensionError(f"matmul needs a >= 2-D left operand, got {a.shape}")
    vec = b.ndim == 1
    bd = b.data[:, None] if vec else b.data
    ad = a.data
    if ad.shape[-1] != bd.shape[-2]:
        raise DimensionError(f"matmul inner dims disagree: {a.shape} @ {b.shape}")
    if ad.ndim == 2 and bd.ndim == 2:
        out = np.matmul(ad[:, None, :], bd)[:, 0, :]
    else:
        out = np.matmul(ad, bd)
    if vec:
        out = out[..., 0]

    def back(g):
        if vec:
            g = g[..., None]
        ga = np.matmul(g, np.swapaxes(bd, -1, -2))
        ga = _unbroadcast(ga, ad.shape)
        if bd.ndim == 2:
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), bd.shape)
        if vec:
            gb = gb[:, 0]
        return ga, gb

    return apply_op(out, (a, b), back)


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = x.shape
    y = np.asarray(x.data.sum(axis=axis, keepdims=keepdims))

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return apply_op(y, (x,), back)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = x.shape
    if axis is None:
        count = x.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([shape[a] for a in axes]))
    y = np.asarray(x.data.mean(axis=axis, keepdims=keepdims))

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, shape),)

    return apply_op(y, (x,), back)


# --------------------------------------------------------------------------
# shape manipulation


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    try:
        y = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(str(exc)) from exc
    return apply_op(y, (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = np.argsort(axes)
    return apply_op(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def expand_dims(x: Tensor, axis: int) -> Tensor:
    return reshape(x, np.expand_dims(x.data, axis).shape)


def broadcast_to(x: Tensor, shape) -> Tensor:
    old = x.shape
    try:
        y = np.broadcast_to(x.data, shape)
    except ValueError as exc:
        raise DimensionError(str(exc)) from exc
    return apply_op(y, (x,), lambda g: (_unbroadcast(g, old),))


def getitem(x: Tensor, index) -> Tensor:
    """Basic (slice/integer) indexing."""
    shape, dtype = x.shape, x.dtype

    def back(g):
        gx = np.zeros(shape, dtype=dtype)
        gx[index] = g
        return (gx,)

    return apply_op(x.data[index], (x,), back)


def concat(ts: Sequence[Tensor], axis: int = -1) -> Tensor:
    ts = list(ts)
    if not ts:
        raise DimensionError("concat of an empty list")
    if len(ts) == 1:
        return ts[0]
    nd = ts[0].ndim
    ax = axis % nd
    for t in ts[1:]:
        if t.ndim != nd or any(
            t.shape[i] != ts[0].shape[i] for i in range(nd) if i != ax
        ):
            raise DimensionError(
                f"concat along axis {axis}: incompatible shapes {[t.shape for t in ts]}"
            )
    sizes = [t.shape[ax] for t in ts]
    bounds = np.cumsum([0] + sizes)
    y = np.concatenate([t.data for t in ts], axis=ax)

    def back(g):
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            sl = [slice(None)] * nd
            sl[ax] = slice(lo, hi)
            out.append(g[tuple(sl)])
        return tuple(out)

    return apply_op(y, tuple(ts), back)


def split(x: Tensor, sizes: Sequence[int], axis: int = -1) -> list[Tensor]:
    ax = axis % x.ndim
    if sum(sizes) != x.shape[ax]:
        raise DimensionError(f"split sizes {sizes} do not cover extent {x.shape[ax]}")
    out, lo = [], 0
    for n in sizes:
        sl = [slice(None)] * x.ndim
        sl[ax] = slice(lo, lo + n)
        out.append(getitem(x, tuple(sl)))
        lo += n
    return out


def stack(ts: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = list(ts)
    if not ts:
        raise DimensionError("stack of an empty list")
    shape = ts[0].shape
    for t in ts:
        if t.shape != shape:
            raise DimensionError(f"stack: shapes differ {[t.shape for t in ts]}")
    y = np.stack([t.data for t in ts], axis=axis)
    ax = axis % y.ndim

    def back(g):
        return tuple(np.take(g, i, axis=ax) for i in range(len(ts)))

    return apply_op(y, tuple(ts), back)


def embedding(weight: Tensor, ids) -> Tensor:
    """Row lookup ``weight[ids]``; gradients scatter-add into the table."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise ContractError(f"id out of range for table with {weight.shape[0]} rows")
    wshape, dtype = weight.shape, weight.dtype

    def back(g):
        gw = np.zeros(wshape, dtype=dtype)
        np.add.at(gw, ids.reshape(-1), g.reshape(-1, wshape[1]))
        return (gw,)

    return apply_op(weight.data[ids], (weight,), back)


def pick(x: Tensor, ids) -> Tensor:
    """Select ``x[..., ids[...]]`` along the last axis."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.shape != x.shape[:-1]:
        raise DimensionError(f"pick ids {ids.shape} do not match {x.shape[:-1]}")
    shape, dtype = x.shape, x.dtype
    y = np.take_along_axis(x.data, ids[..., None], axis=-1)[..., 0]

    def back(g):
        gx = np.zeros(shape, dtype=dtype)
        np.put_along_axis(gx, ids[..., None], g[..., None], axis=-1)
        return (gx,)

    return apply_op(y, (x,), back)


# --------------------------------------------------------------------------
# regularisation and normalisation


def dropout(x: Tensor, rate: float, training: bool, rng: RngState | None) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-rate) at train time."""
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ContractError("training-mode dropout needs an RngState")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return apply_op(x.data * keep, (x,), lambda g: (g * keep,))


@dataclass
class BatchNormState:
    """Running statistics for one batch-norm site."""

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    eps: float = 1e-5

    @classmethod
    def create(cls, width: int, momentum: float = 0.9, eps: float = 1e-5, dtype=None):
        dtype = dtype or get_default_dtype()
        return cls(np.zeros(width, dtype=dtype), np.ones(width, dtype=dtype), momentum, eps)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    state: BatchNormState,
    training: bool,
    mask=None,
) -> Tensor:
    """Per-feature standardisation over all leading axes of ``x``.

    ``mask`` (shape ``x.shape[:-1]``) restricts the statistics to real rows;
    masked rows are emitted as zeros and receive no gradient.
    """
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"batch_norm: gamma/beta must have shape ({d},)")
    lead = x.shape[:-1]
    xd = x.data.reshape(-1, d)
    if mask is None:
        m = np.ones((xd.shape[0], 1), dtype=xd.dtype)
    else:
        m = np.asarray(mask, dtype=xd.dtype).reshape(-1, 1)
    gd, bd = gamma.data, beta.data
    eps = state.eps
    if training:
        n = float(m.sum())
        if n == 0:
            raise ContractError("batch_norm over zero unmasked rows")
        mu = (m * xd).sum(axis=0) / n
        var = (m * (xd - mu) ** 2).sum(axis=0) / n
        mom = state.momentum
        state.running_mean = (mom * state.running_mean + (1 - mom) * mu).astype(
            state.running_mean.dtype
        )
        state.running_var = (mom * state.running_var + (1 - mom) * var).astype(
            state.running_var.dtype
        )
    else:
        mu, var = state.running_mean, state.running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * inv
    y = m * (gd * xhat + bd)

    def back(g):
        g = g.reshape(-1, d) * m
        dgamma = (g * xhat).sum(axis=0)
        dbeta = g.sum(axis=0)
        dxhat = g * gd
        if training:
            dx = (inv / n) * (
                n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0)
            )
            dx = dx * m
        else:
            dx = dxhat * inv
        return dx.reshape(lead + (d,)), dgamma, dbeta

    return apply_op(y.reshape(lead + (d,)), (x, gamma, beta), back)


# --------------------------------------------------------------------------
# finite-difference gradient check


@dataclass
class GradCheckReport:
    errors: dict = field(default_factory=dict)
    tol: float = 1e-6

    @property
    def passed(self) -> bool:
        return all(e < self.tol for e in self.errors.values())

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def lines(self) -> list[str]:
        return [
            f"{'PASS' if err < self.tol else 'FAIL'}\t{name}\t{err:.3e}"
            for name, err in self.errors.items()
        ]


def grad_check(
    f: Callable[[], Tensor],
    inputs,
    h: float = 1e-5,
    tol: float = 1e-6,
    max_entries: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare tape gradients of ``f()`` with central differences.

    ``inputs`` is a mapping name -> Tensor (or a sequence, named by index);
    ``f`` closes over them and returns a scalar. For every input the report
    holds max|g_ad - g_fd| / max(max|g_ad|, max|g_fd|, 1e-8). With
    ``max_entries`` only that many coordinates per input are perturbed
    (always including the largest-gradient coordinate).
    """
    if not isinstance(inputs, dict):
        inputs = {str(i): t for i, t in enumerate(inputs)}
    for name, t in inputs.items():
        if t.dtype != np.float64:
            raise ContractError(f"grad_check needs float64 inputs ({name} is {t.dtype})")
    with no_tape():
        base1 = np.array(f().data, copy=True)
        base2 = np.array(f().data, copy=True)
    if not np.array_equal(base1, base2):
        raise ContractError("grad_check: f is non-deterministic (two forward runs differ)")

    params = list(inputs.values())
    saved_flags = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = True
    try:
        with Tape() as tape:
            loss = f()
        tape.backward(loss, params)
    finally:
        for p, flag in zip(params, saved_flags):
            p.requires_grad = flag

    pick_rng = np.random.default_rng(seed)
    report = GradCheckReport(tol=tol)
    for name, t in inputs.items():
        g_ad = t.grad.reshape(-1)
        if not t.data.flags.c_contiguous:
            t.data = np.ascontiguousarray(t.data)
        flat = t.data.reshape(-1)
        if max_entries is None or flat.size <= max_entries:
            coords = np.arange(flat.size)
        else:
            coords = pick_rng.choice(flat.size, size=max_entries - 1, replace=False)
            coords = np.unique(np.append(coords, np.argmax(np.abs(g_ad))))
        g_fd = np.zeros(len(coords))
        with no_tape():
            for n, idx in enumerate(coords):
                orig = flat[idx]
                flat[idx] = orig + h
                fp = float(f().data)
                flat[idx] = orig - h
                fm = float(f().data)
                flat[idx] = orig
                g_fd[n] = (fp - fm) / (2 * h)
        sel = g_ad[coords]
        denom = max(np.abs(sel).max(initial=0.0), np.abs(g_fd).max(initial=0.0), 1e-8)
        report.errors[name] = float(np.abs(sel - g_fd).max(initial=0.0) / denom)
        t.grad = None
    return report
