"""Relation Network Layer: convolution, graph propagation, output MLP.

The graph-propagation stage pairs every position with every position
(itself included), maps each pair through a small MLP and averages over
partners. ``rn_generic`` is the textbook relation-network composition and is
kept deliberately naive so tests can use it as an oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError
from .layers import ConvParams, Init, MlpParams, conv1d_seq, mlp_apply
from .tensor import Tensor


@dataclass
class RnlParams:
    convs: list[ConvParams] = field(default_factory=list)
    gp: MlpParams = field(default_factory=MlpParams)
    out: MlpParams = field(default_factory=MlpParams)

    @classmethod
    def create(
        cls,
        d: int,
        convs: Sequence[tuple[int, int]],
        gp_width: int,
        init: Init,
        batch_norm: bool = False,
        gp_layers: int = 4,
        out_layers: int = 2,
    ) -> "RnlParams":
        conv_params, width = [], d
        for kernel, channels in convs:
            conv_params.append(ConvParams.create(kernel, width, channels, init, batch_norm))
            width = channels
        gp = MlpParams.create([2 * width] + [gp_width] * gp_layers, init)
        out = MlpParams.create([gp_width] + [gp_width] * (out_layers - 1) + [d], init)
        return cls(conv_params, gp, out)

    @property
    def conv_out_dim(self) -> int:
        return self.convs[-1].out_dim if self.convs else self.gp.in_dim // 2


def rn_generic(objects: Sequence, g: Callable, f: Callable):
    """f(sum over all ordered pairs (i, j), i == j included, of g([o_i; o_j]))."""
    objs = [np.asarray(o, dtype=np.float64) for o in objects]
    if not objs:
        raise ContractError("rn_generic needs at least one object")
    total = None
    for oi in objs:
        for oj in objs:
            val = np.asarray(g(np.concatenate([oi, oj])), dtype=np.float64)
            total = val if total is None else total + val
    return f(total)


def gp_stage(
    c: Tensor,
    p: RnlParams,
    mask=None,
    slope: float = 0.1,
    stats: dict | None = None,
) -> Tensor:
    """r_i = mean over partners j of gp_mlp([c_i; c_j]).

    With a mask the mean runs over the sentence's real positions only and
    divides by its true length. The first GP layer is applied as
    c_i W_top + c_j W_bottom, which equals W [c_i; c_j] without
    materialising the l x l concatenations.
    """
    if c.ndim != 3:
        raise DimensionError(f"gp_stage expects b x l x d, got {c.shape}")
    b, l, d = c.shape
    if l < 1:
        raise ContractError("gp_stage needs at least one position")
    first = p.gp.layers[0]
    if first.W.shape[0] != 2 * d:
        raise DimensionError(f"gp-mlp input width {first.W.shape[0]} != 2 x {d}")
    left = c @ first.W[:d]
    right = c @ first.W[d:] + first.b
    w = left.shape[-1]
    pre = T.reshape(left, (b, l, 1, w)) + T.reshape(right, (b, 1, l, w))
    x = T.leaky_relu(pre, slope)
    for layer in p.gp.layers[1:]:
        x = T.leaky_relu(layer(x), slope)
    if stats is not None:
        stats["pairs"] = stats.get("pairs", 0) + b * l * l
    if mask is None:
        return T.mean(x, axis=2)
    mask = np.asarray(mask, dtype=bool)
    lengths = mask.sum(axis=1).astype(c.dtype)
    if (lengths == 0).any():
        raise ContractError("gp_stage: a sentence has no unmasked positions")
    partner = mask.astype(c.dtype)[:, None, :, None]
    return T.tsum(x * partner, axis=2) / lengths[:, None, None]


def rnl_forward(
    h: Tensor,
    p: RnlParams,
    mask=None,
    training: bool = False,
    slope: float = 0.1,
    stats: dict | None = None,
) -> Tensor:
    """out_mlp(gp_stage(conv_stack(h))); output has the same shape as ``h``."""
    c = h
    for conv in p.convs:
        c = conv1d_seq(c, conv, mask, training, slope)
    r = gp_stage(c, p, mask, slope, stats)
    o = mlp_apply(r, p.out, slope)
    if o.shape != h.shape:
        raise DimensionError(f"rnl_forward produced {o.shape} for input {h.shape}")
    if mask is not None:
        o = o * np.asarray(mask, dtype=h.dtype)[:, :, None]
    return o
