"""Finite-difference verification of every layer and of the full model loss.

The suite shrinks a profile to width 16 (GP width 8, 8 conv channels) so that
central differences over every parameter stay cheap, runs in float64 with
dropout off and batch norm in inference mode, and checks:

* each isolated layer op against a tolerance of ``layer_tol`` (1e-6);
* every parameter tensor of the full training loss against ``model_tol`` (1e-4).
"""

from __future__ import annotations

import copy
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .config import ModelConfig, profile
from .data import BOS, EOS, Batch
from .layers import (
    ConvParams,
    DenseResidualState,
    GruParams,
    Linear,
    MlpParams,
    conv1d_seq,
    gru_sequence,
    gru_step,
    mlp_apply,
    named_buffers,
    named_parameters,
    residual_dense,
)
from .rnl import RnlParams, gp_stage, rnl_forward
from .seq2seq import RNMT, AttentionParams, Seq2SeqParams, attend
from .tensor import GradCheckReport, RngState, Tensor, grad_check

D = 16


@dataclass
class SuiteResult:
    reports: dict[str, GradCheckReport] = field(default_factory=dict)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports.values())

    def lines(self) -> list[str]:
        out = []
        for group, rep in self.reports.items():
            out.extend(line.replace("\t", f"\t{group}:", 1) for line in rep.lines())
        return out


def shrink(model: ModelConfig, src_vocab: int = 9, tgt_vocab: int = 8) -> ModelConfig:
    """Keep a profile's structure (stack, kernels, batch norm) at gradcheck scale."""
    cfg = copy.deepcopy(model)
    cfg.embed_dim = cfg.hidden_dim = cfg.attention_dim = cfg.readout_dim = D
    cfg.gp_width = 8
    cfg.convs = [(k, 8) for k, _ in cfg.convs]
    cfg.src_vocab, cfg.tgt_vocab = src_vocab, tgt_vocab
    cfg.dropout = 0.0
    cfg.precision = "float64"
    return cfg.validate()


def _uniform(rng: RngState, scale: float = 0.5):
    return lambda shape: rng.uniform(-scale, scale, shape, np.float64)


def _randomise_buffers(obj, rng: RngState) -> None:
    # non-trivial running statistics so inference-mode BN is actually exercised
    for _, state, attr in named_buffers(obj):
        arr = getattr(state, attr)
        if attr == "running_var":
            setattr(state, attr, rng.uniform(0.5, 2.0, arr.shape, np.float64))
        else:
            setattr(state, attr, rng.uniform(-0.3, 0.3, arr.shape, np.float64))


def _data(rng: RngState, *shape) -> Tensor:
    return Tensor(rng.uniform(-1.0, 1.0, shape, np.float64), requires_grad=True)


def _coef(rng: RngState, shape) -> np.ndarray:
    return rng.uniform(-1.0, 1.0, shape, np.float64)


def _check(f, params, extra, tol, max_entries=None) -> GradCheckReport:
    inputs = dict(named_parameters(params)) if params is not None else {}
    inputs.update(extra)
    return grad_check(f, inputs, tol=tol, max_entries=max_entries)


def layer_reports(cfg: ModelConfig, seed: int = 0, tol: float = 1e-6) -> dict[str, GradCheckReport]:
    """Gradient checks of the isolated building blocks, batch 2, length 4."""
    rng = RngState(seed)
    init = _uniform(rng)
    b, l = 2, 4
    mask = np.array([[True] * l, [True] * (l - 1) + [False]])
    out: dict[str, GradCheckReport] = {}

    gru = GruParams.create(D, D, init)
    x_t, h_prev = _data(rng, b, D), _data(rng, b, D)
    w = _coef(rng, (b, D))
    out["gru_step"] = _check(
        lambda: T.tsum(gru_step(x_t, h_prev, gru) * w), gru, {"x": x_t, "h": h_prev}, tol
    )

    x = _data(rng, b, l, D)
    w = _coef(rng, (b, l, D))
    for reverse in (False, True):
        tag = "gru_bwd" if reverse else "gru_fwd"
        out[tag] = _check(
            lambda: T.tsum(gru_sequence(x, gru, mask, reverse) * w), gru, {"x": x}, tol
        )

    for kernel, channels in cfg.convs:
        conv = ConvParams.create(kernel, D, channels, init, cfg.batch_norm)
        _randomise_buffers(conv, rng)
        wc = _coef(rng, (b, l, channels))
        out[f"conv_k{kernel}"] = _check(
            lambda: T.tsum(conv1d_seq(x, conv, mask, False, cfg.leaky_slope) * wc),
            conv,
            {"x": x},
            tol,
        )

    rnl = RnlParams.create(D, cfg.convs, cfg.gp_width, init, cfg.batch_norm, cfg.gp_layers, cfg.out_layers)
    _randomise_buffers(rnl, rng)
    c = _data(rng, b, l, rnl.conv_out_dim)
    wg = _coef(rng, (b, l, cfg.gp_width))
    out["gp_stage"] = _check(
        lambda: T.tsum(gp_stage(c, rnl, mask, cfg.leaky_slope) * wg), rnl.gp, {"c": c}, tol
    )

    mlp = MlpParams.create([D, 8, D], init)
    out["mlp"] = _check(lambda: T.tsum(mlp_apply(x, mlp, cfg.leaky_slope) * w), mlp, {"x": x}, tol)

    out["rnl"] = _check(
        lambda: T.tsum(rnl_forward(x, rnl, mask, False, cfg.leaky_slope) * w), rnl, {"x": x}, tol
    )

    dense_w = [Tensor(init((k * D, D)), requires_grad=True) for k in (1, 2)]
    dense_b = [Tensor(init((D,)), requires_grad=True) for _ in range(2)]
    y1, y2 = _data(rng, b, l, D), _data(rng, b, l, D)

    def dense_loss():
        st = DenseResidualState([Linear(W, bias) for W, bias in zip(dense_w, dense_b)])
        h1 = residual_dense(x, y1, st)
        return T.tsum(residual_dense(h1, y2, st) * w)

    extra = {"x": x, "y1": y1, "y2": y2}
    extra.update({f"W{k}": t for k, t in enumerate(dense_w)})
    extra.update({f"b{k}": t for k, t in enumerate(dense_b)})
    out["residual_dense"] = _check(dense_loss, None, extra, tol)

    att = AttentionParams.create(D, D, D, init)
    s_q = _data(rng, b, D)
    wa = _coef(rng, (b, D))
    wal = _coef(rng, (b, l))

    def att_loss():
        ctx, alpha = attend(s_q, x, mask, att)
        return T.tsum(ctx * wa) + T.tsum(alpha * wal)

    out["attention"] = _check(att_loss, att, {"s": s_q, "enc": x}, tol)
    return out


def model_batch(cfg: ModelConfig, rng: RngState) -> Batch:
    """Two sentences, source lengths 4 and 3, target lengths 3 and 2 plus framing."""
    src = np.zeros((2, 4), dtype=np.int64)
    src[0] = rng.integers(4, cfg.src_vocab, 4)
    src[1, :3] = rng.integers(4, cfg.src_vocab, 3)
    tgt = np.zeros((2, 5), dtype=np.int64)
    body = rng.integers(4, cfg.tgt_vocab, 3)
    tgt[0] = [BOS, *body, EOS]
    tgt[1, :4] = [BOS, *body[:2], EOS]
    return Batch(src, tgt, np.array([4, 3]), np.array([5, 4]), [0, 1])


def model_report(
    cfg: ModelConfig, seed: int = 0, tol: float = 1e-4, max_entries: int | None = None
) -> GradCheckReport:
    """Gradient check of the teacher-forced NLL with respect to every parameter."""
    from .training import batch_loss

    rng = RngState(seed + 1)
    params = Seq2SeqParams.create(cfg, _uniform(rng, 0.3))
    _randomise_buffers(params, rng)
    model = RNMT(cfg, params)
    batch = model_batch(cfg, rng)
    return grad_check(
        lambda: batch_loss(model, batch, training=False),
        dict(params.named()),
        tol=tol,
        max_entries=max_entries,
    )


def run_suite(
    profile_name: str = "small",
    seed: int = 0,
    layer_tol: float = 1e-6,
    model_tol: float = 1e-4,
    max_entries: int | None = None,
) -> SuiteResult:
    start = time.perf_counter()
    cfg = shrink(profile(profile_name)[0])
    res = SuiteResult()
    with T.default_dtype("float64"):
        for name, rep in layer_reports(cfg, seed, layer_tol).items():
            res.reports[f"layer/{name}"] = rep
        res.reports["model"] = model_report(cfg, seed, model_tol, max_entries)
    res.seconds = time.perf_counter() - start
    return res
