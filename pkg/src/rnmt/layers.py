"""Neural building blocks: GRU, windowed convolution, MLP, dense residuals.

Parameter containers are plain dataclasses of :class:`Tensor` fields so the
generic walkers at the bottom of this module can name and enumerate them.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from . import tensor as T
from .errors import DimensionError, ParameterError
from .tensor import BatchNormState, Tensor

Init = Callable[[tuple], np.ndarray]


def _param(init: Init, *shape) -> Tensor:
    return Tensor(init(tuple(shape)), requires_grad=True)


@dataclass
class Linear:
    W: Tensor
    b: Tensor

    @classmethod
    def create(cls, d_in: int, d_out: int, init: Init) -> "Linear":
        return cls(_param(init, d_in, d_out), _param(init, d_out))

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.W + self.b


# --------------------------------------------------------------------------
# GRU


@dataclass
class GruParams:
    """Update (z), reset (r) and candidate (h) weights of one GRU."""

    W_z: Tensor
    U_z: Tensor
    b_z: Tensor
    W_r: Tensor
    U_r: Tensor
    b_r: Tensor
    W_h: Tensor
    U_h: Tensor
    b_h: Tensor

    @classmethod
    def create(cls, d_in: int, d_h: int, init: Init) -> "GruParams":
        kw = {}
        for gate in "zrh":
            kw[f"W_{gate}"] = _param(init, d_in, d_h)
            kw[f"U_{gate}"] = _param(init, d_h, d_h)
            kw[f"b_{gate}"] = _param(init, d_h)
        return cls(**kw)

    @property
    def input_dim(self) -> int:
        return self.W_z.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.U_z.shape[0]


def _gru_cell(xz: Tensor, xr: Tensor, xh: Tensor, h: Tensor, p: GruParams) -> Tensor:
    z = T.sigmoid(xz + h @ p.U_z)
    r = T.sigmoid(xr + h @ p.U_r)
    cand = T.tanh(xh + (r * h) @ p.U_h)
    return h + z * (cand - h)


def gru_step(x_t: Tensor, h_prev: Tensor, p: GruParams) -> Tensor:
    """One GRU transition.

    z = sigmoid(x W_z + h U_z + b_z), r = sigmoid(x W_r + h U_r + b_r),
    cand = tanh(x W_h + (r*h) U_h + b_h), h' = (1-z)*h + z*cand.
    """
    if x_t.shape[-1] != p.input_dim or h_prev.shape[-1] != p.hidden_dim:
        raise DimensionError(
            f"gru_step: x {x_t.shape} / h {h_prev.shape} vs params "
            f"({p.input_dim}, {p.hidden_dim})"
        )
    return _gru_cell(
        x_t @ p.W_z + p.b_z, x_t @ p.W_r + p.b_r, x_t @ p.W_h + p.b_h, h_prev, p
    )


def gru_sequence(x: Tensor, p: GruParams, mask=None, reverse: bool = False) -> Tensor:
    """Run a GRU over ``x`` (b x l x d_in) from zero state; returns b x l x d_h.

    With a mask, padded positions hold (and emit) the zero state, so a
    right-to-left pass starts fresh at each sentence's true last token.
    """
    if x.ndim != 3 or x.shape[-1] != p.input_dim:
        raise DimensionError(f"gru_sequence: bad input shape {x.shape}")
    b, l, _ = x.shape
    xz = x @ p.W_z + p.b_z
    xr = x @ p.W_r + p.b_r
    xh = x @ p.W_h + p.b_h
    h = Tensor(np.zeros((b, p.hidden_dim), dtype=x.dtype))
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        fmask = mask.astype(x.dtype)[:, :, None]
    outs = [None] * l
    steps = range(l - 1, -1, -1) if reverse else range(l)
    for t in steps:
        h = _gru_cell(xz[:, t], xr[:, t], xh[:, t], h, p)
        if mask is not None and not mask[:, t].all():
            h = h * fmask[:, t]
        outs[t] = h
    return T.stack(outs, axis=1)


def bigru_encode(x: Tensor, fwd: GruParams, bwd: GruParams, lengths=None) -> Tensor:
    """Concatenate left-to-right and right-to-left GRU states per position."""
    mask = None
    if lengths is not None:
        lengths = np.asarray(lengths)
        if (lengths > x.shape[1]).any():
            raise DimensionError("bigru_encode: a length exceeds the padded extent")
        mask = np.arange(x.shape[1])[None, :] < lengths[:, None]
    return T.concat(
        [gru_sequence(x, fwd, mask), gru_sequence(x, bwd, mask, reverse=True)], axis=-1
    )


# --------------------------------------------------------------------------
# convolution


@dataclass
class ConvParams:
    kernel: int
    W: Tensor
    b: Tensor
    bn_gamma: Tensor | None = None
    bn_beta: Tensor | None = None
    bn_state: BatchNormState | None = None

    @classmethod
    def create(
        cls, kernel: int, d_in: int, d_out: int, init: Init, batch_norm: bool = False
    ) -> "ConvParams":
        if kernel < 1 or kernel % 2 == 0:
            raise ParameterError(f"kernel width must be odd and positive, got {kernel}")
        p = cls(kernel, _param(init, kernel * d_in, d_out), _param(init, d_out))
        if batch_norm:
            dtype = p.W.dtype
            p.bn_gamma = Tensor(np.ones(d_out, dtype=dtype), requires_grad=True)
            p.bn_beta = Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True)
            p.bn_state = BatchNormState.create(d_out, dtype=dtype)
        return p

    @property
    def out_dim(self) -> int:
        return self.W.shape[1]


def conv1d_seq(
    h: Tensor,
    p: ConvParams,
    mask=None,
    training: bool = False,
    slope: float = 0.1,
) -> Tensor:
    """Centered width-k convolution over positions with zero padding.

    c_i = leaky_relu(W [h_{i-p}; ...; h_{i+p}] + b), p = (k-1)//2; batch norm
    (if configured) sits between the affine map and the activation.
    """
    k = p.kernel
    if k < 1 or k % 2 == 0:
        raise ParameterError(f"kernel width must be odd and positive, got {k}")
    if h.ndim != 3 or h.shape[-1] * k != p.W.shape[0]:
        raise DimensionError(f"conv1d_seq: input {h.shape} vs kernel {p.W.shape}")
    b, l, d = h.shape
    fmask = None
    if mask is not None:
        fmask = np.asarray(mask, dtype=h.dtype)[:, :, None]
        h = h * fmask
    pad = (k - 1) // 2
    if pad:
        zeros = Tensor(np.zeros((b, pad, d), dtype=h.dtype))
        padded = T.concat([zeros, h, zeros], axis=1)
        window = T.concat([padded[:, i : i + l] for i in range(k)], axis=2)
    else:
        window = h
    pre = window @ p.W + p.b
    if p.bn_state is not None:
        pre = T.batch_norm(pre, p.bn_gamma, p.bn_beta, p.bn_state, training, mask)
    out = T.leaky_relu(pre, slope)
    if fmask is not None:
        out = out * fmask
    return out


# --------------------------------------------------------------------------
# MLP


@dataclass
class MlpParams:
    layers: list[Linear] = field(default_factory=list)

    @classmethod
    def create(cls, dims: list[int], init: Init) -> "MlpParams":
        return cls([Linear.create(a, b, init) for a, b in zip(dims[:-1], dims[1:])])

    @property
    def in_dim(self) -> int:
        return self.layers[0].W.shape[0]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].W.shape[1]


def mlp_apply(x: Tensor, p: MlpParams, slope: float = 0.1) -> Tensor:
    """Affine map followed by leaky ReLU, for every layer including the last."""
    if x.shape[-1] != p.in_dim:
        raise DimensionError(f"mlp_apply: input width {x.shape[-1]} != {p.in_dim}")
    for layer in p.layers:
        x = T.leaky_relu(layer(x), slope)
    return x


# --------------------------------------------------------------------------
# residual + dense concatenation


@dataclass
class DenseResidualState:
    """Sums h^1..h^l retained across depths plus one W_dc/b_dc per depth."""

    weights: list[Linear]
    retained: list[Tensor] = field(default_factory=list)

    @property
    def depth(self) -> int:
        return len(self.retained)


def residual_dense(layer_in: Tensor, layer_out: Tensor, state: DenseResidualState) -> Tensor:
    """h^l = in + out; return W_dc^l [h^1; ...; h^l] + b_dc^l."""
    if layer_in.shape != layer_out.shape:
        raise DimensionError(
            f"residual_dense: input {layer_in.shape} and output {layer_out.shape} differ"
        )
    if state.retained and state.retained[0].shape != layer_in.shape:
        raise DimensionError("residual_dense: feature shape drifted across depths")
    if state.depth >= len(state.weights):
        raise DimensionError("residual_dense: no dense weights left for this depth")
    state.retained.append(layer_in + layer_out)
    proj = state.weights[state.depth - 1]
    if proj.W.shape[0] != state.depth * layer_in.shape[-1]:
        raise DimensionError(
            f"residual_dense: W_dc {proj.W.shape} does not fit depth {state.depth}"
        )
    return proj(T.concat(state.retained, axis=-1))


# --------------------------------------------------------------------------
# parameter walking


def _children(obj) -> Iterator[tuple[str, object]]:
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        for f in dataclasses.fields(obj):
            yield f.name, getattr(obj, f.name)
    elif isinstance(obj, (list, tuple)):
        for i, v in enumerate(obj):
            yield str(i), v


def named_parameters(obj, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
    """Depth-first (name, Tensor) pairs in field-definition order."""
    if isinstance(obj, Tensor):
        yield prefix, obj
        return
    for name, child in _children(obj):
        if child is None or isinstance(child, BatchNormState):
            continue
        yield from named_parameters(child, f"{prefix}.{name}" if prefix else name)


def named_buffers(obj, prefix: str = "") -> Iterator[tuple[str, BatchNormState, str]]:
    """(name, owner, attribute) for every running-statistics array."""
    if isinstance(obj, BatchNormState):
        yield f"{prefix}.running_mean", obj, "running_mean"
        yield f"{prefix}.running_var", obj, "running_var"
        return
    if isinstance(obj, Tensor):
        return
    for name, child in _children(obj):
        if child is not None:
            yield from named_buffers(child, f"{prefix}.{name}" if prefix else name)
