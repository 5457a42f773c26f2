"""Attention encoder-decoder with Relation Network Layers in the encoder.

Encoder: embeddings, then the configured stack (default GRU left-to-right,
RNL, GRU right-to-left, RNL), every layer boundary joined by a residual sum
and dense concatenation. Decoder: conditional GRU (GRU1 on the previous
target word, attention queried with that intermediate state, GRU2 on the
context), a linear readout of (state, previous embedding, context) and a
vocabulary projection.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .data import BOS, EOS
from .errors import ContractError, DimensionError
from .layers import (
    DenseResidualState,
    GruParams,
    Init,
    Linear,
    _gru_cell,
    _param,
    gru_sequence,
    gru_step,
    named_parameters,
    residual_dense,
)
from .rnl import RnlParams, rnl_forward
from .tensor import RngState, Tensor


@dataclass
class AttentionParams:
    W_a: Tensor
    U_a: Tensor
    v_a: Tensor

    @classmethod
    def create(cls, d_query: int, d_enc: int, d_att: int, init: Init) -> "AttentionParams":
        return cls(_param(init, d_query, d_att), _param(init, d_enc, d_att), _param(init, d_att))


@dataclass
class DecoderParams:
    gru1: GruParams
    gru2: GruParams
    U_o: Tensor
    V_o: Tensor
    C_o: Tensor
    b_o: Tensor
    W_v: Tensor


@dataclass
class EncoderParams:
    layers: list = field(default_factory=list)
    dense: list[Linear] = field(default_factory=list)


@dataclass
class Seq2SeqParams:
    src_embed: Tensor
    tgt_embed: Tensor
    encoder: EncoderParams
    W_init: Tensor
    attention: AttentionParams
    decoder: DecoderParams

    @classmethod
    def create(cls, cfg: ModelConfig, init: Init) -> "Seq2SeqParams":
        cfg.validate()
        if cfg.src_vocab < 1 or cfg.tgt_vocab < 1:
            raise ContractError("vocabulary sizes must be set before building parameters")
        d = cfg.hidden_dim
        layers = []
        for tag in cfg.stack:
            if tag == "rnl":
                layers.append(
                    RnlParams.create(
                        d, cfg.convs, cfg.gp_width, init, cfg.batch_norm, cfg.gp_layers, cfg.out_layers
                    )
                )
            else:
                layers.append(GruParams.create(d, d, init))
        dense = [Linear.create(depth * d, d, init) for depth in range(1, len(cfg.stack) + 1)]
        decoder = DecoderParams(
            gru1=GruParams.create(cfg.embed_dim, d, init),
            gru2=GruParams.create(d, d, init),
            U_o=_param(init, d, cfg.readout_dim),
            V_o=_param(init, cfg.embed_dim, cfg.readout_dim),
            C_o=_param(init, d, cfg.readout_dim),
            b_o=_param(init, cfg.readout_dim),
            W_v=_param(init, cfg.readout_dim, cfg.tgt_vocab),
        )
        return cls(
            src_embed=_param(init, cfg.src_vocab, cfg.embed_dim),
            tgt_embed=_param(init, cfg.tgt_vocab, cfg.embed_dim),
            encoder=EncoderParams(layers, dense),
            W_init=_param(init, d, d),
            attention=AttentionParams.create(d, d, cfg.attention_dim, init),
            decoder=decoder,
        )

    def named(self) -> list[tuple[str, Tensor]]:
        return list(named_parameters(self))

    def count(self) -> int:
        return sum(t.data.size for _, t in self.named())


@dataclass
class EncoderState:
    enc: Tensor
    proj: Tensor
    mask: np.ndarray

    def take(self, rows) -> "EncoderState":
        return EncoderState(
            Tensor._wrap(self.enc.data[rows]), Tensor._wrap(self.proj.data[rows]), self.mask[rows]
        )


@dataclass
class AlignmentMatrix:
    """Target x source attention weights (one row per emitted target word)."""

    weights: np.ndarray

    @property
    def links(self) -> list[tuple[int, int]]:
        return extract_alignment(self)


@dataclass
class BeamHypothesis:
    tokens: list[int]
    log_prob: float
    state: object = None
    alphas: list = field(default_factory=list)

    @property
    def finished(self) -> bool:
        return bool(self.tokens) and self.tokens[-1] == EOS

    @property
    def score(self) -> float:
        return self.log_prob / max(len(self.tokens), 1)

    @property
    def output_ids(self) -> list[int]:
        return self.tokens[:-1] if self.finished else list(self.tokens)

    def alignment(self) -> AlignmentMatrix:
        rows = self.alphas[: len(self.output_ids)]
        if not rows:
            return AlignmentMatrix(np.zeros((0, 0)))
        return AlignmentMatrix(np.stack(rows))


def attend(
    s_query: Tensor, enc: Tensor, mask, ap: AttentionParams, enc_proj: Tensor | None = None
) -> tuple[Tensor, Tensor]:
    """e_i = v_a . tanh(W_a s + U_a h_i); alpha = masked softmax(e); a = sum alpha_i h_i."""
    if enc.ndim != 3 or s_query.ndim != 2 or s_query.shape[0] != enc.shape[0]:
        raise DimensionError(f"attend: query {s_query.shape} vs encoder {enc.shape}")
    b, l, d = enc.shape
    if enc_proj is None:
        enc_proj = enc @ ap.U_a
    q = T.reshape(s_query @ ap.W_a, (b, 1, ap.W_a.shape[1]))
    energy = T.tanh(enc_proj + q) @ ap.v_a
    mask = np.ones((b, l), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    alpha = T.softmax(energy, axis=-1, mask=mask)
    context = T.reshape(T.reshape(alpha, (b, 1, l)) @ enc, (b, d))
    return context, alpha


def extract_alignment(am: AlignmentMatrix) -> list[tuple[int, int]]:
    """One (target_pos, source_pos) link per row, 1-based; ties go to the lower source index."""
    w = np.asarray(am.weights)
    return [(j + 1, int(np.argmax(row)) + 1) for j, row in enumerate(w)]


def beam_search(
    step_fn: Callable,
    init_state,
    beam: int,
    max_len: int,
    bos: int = BOS,
    eos: int = EOS,
) -> BeamHypothesis:
    """Generic beam search over per-step log-probabilities.

    ``step_fn(prev_ids, states)`` takes the last token of each live
    hypothesis and the row-stacked states and returns
    ``(logp [k x V], new_states, alphas [k x l] or None)``; states are
    numpy arrays indexed by row. Hypotheses finish at ``eos`` and are ranked
    by log-probability divided by length; live hypotheses still open at
    ``max_len`` are ranked alongside them as truncated outputs.
    """
    if beam < 1 or max_len < 1:
        raise ContractError("beam and max_len must be >= 1")
    live = [BeamHypothesis([], 0.0, None, [])]
    states = init_state
    finished: list[BeamHypothesis] = []
    for _ in range(max_len):
        prev = np.array([h.tokens[-1] if h.tokens else bos for h in live])
        logp, new_states, alphas = step_fn(prev, states)
        logp = np.asarray(logp, dtype=np.float64)
        scores = np.array([h.log_prob for h in live])[:, None] + logp
        vocab = logp.shape[1]
        flat = scores.reshape(-1)
        keep = beam - len(finished)
        order = np.argsort(-flat, kind="stable")[:keep]
        rows, nxt = [], []
        for idx in order:
            i, v = divmod(int(idx), vocab)
            if not np.isfinite(flat[idx]):
                break
            alpha_rows = live[i].alphas + ([alphas[i]] if alphas is not None else [])
            hyp = BeamHypothesis(live[i].tokens + [v], float(flat[idx]), None, alpha_rows)
            if v == eos:
                hyp.state = new_states[i]
                finished.append(hyp)
            else:
                rows.append(i)
                nxt.append(hyp)
        live = nxt
        if not live:
            break
        states = new_states[np.array(rows)]
        for hyp, row in zip(live, states):
            hyp.state = row
        if finished:
            best_done = max(h.score for h in finished)
            if max(h.log_prob for h in live) / max_len <= best_done:
                break
    # hypotheses cut off by max_len compete as truncated outputs, as in greedy decoding
    pool = finished + live
    best = pool[0]
    for h in pool[1:]:
        if h.score > best.score:
            best = h
    return best


class RNMT:
    """The translation model: configuration plus parameters."""

    def __init__(self, cfg: ModelConfig, params: Seq2SeqParams):
        self.cfg = cfg
        self.params = params
        self.dtype = params.src_embed.dtype

    # -- encoder ------------------------------------------------------------

    def encode(
        self,
        src_ids,
        src_mask=None,
        training: bool = False,
        rng: RngState | None = None,
        stats: dict | None = None,
    ) -> Tensor:
        """Return the per-position outputs o_i (b x l x d); padding rows are zero."""
        src_ids = np.asarray(src_ids)
        if src_mask is None:
            src_mask = np.ones(src_ids.shape, dtype=bool)
        src_mask = np.asarray(src_mask, dtype=bool)
        if (src_mask.sum(axis=1) == 0).any():
            raise ContractError("encode: a source sentence is empty")
        if src_ids.max() >= self.cfg.src_vocab or src_ids.min() < 0:
            raise ContractError("encode: source id outside the vocabulary")
        p = self.params
        fmask = src_mask.astype(self.dtype)[:, :, None]
        h = T.embedding(p.src_embed, src_ids) * fmask
        dense = DenseResidualState(p.encoder.dense)
        slope = self.cfg.leaky_slope
        for tag, layer in zip(self.cfg.stack, p.encoder.layers):
            if tag == "rnl":
                out = rnl_forward(h, layer, src_mask, training, slope, stats)
            else:
                out = gru_sequence(h, layer, src_mask, reverse=(tag == "gru_bwd"))
            h = residual_dense(h, out, dense) * fmask
        return h

    def encoder_state(self, src_ids, src_mask=None, training=False, rng=None) -> EncoderState:
        src_ids = np.asarray(src_ids)
        if src_mask is None:
            src_mask = np.ones(src_ids.shape, dtype=bool)
        enc = self.encode(src_ids, src_mask, training, rng)
        return EncoderState(enc, enc @ self.params.attention.U_a, np.asarray(src_mask, dtype=bool))

    def init_decoder_state(self, enc: Tensor, mask) -> Tensor:
        """s_0 = tanh(W_init . masked mean of encoder outputs)."""
        mask = np.asarray(mask, dtype=bool)
        lengths = mask.sum(axis=1).astype(enc.dtype)
        if (lengths == 0).any():
            raise ContractError("init_decoder_state: empty source")
        pooled = T.tsum(enc * mask.astype(enc.dtype)[:, :, None], axis=1) / lengths[:, None]
        return T.tanh(pooled @ self.params.W_init)

    # -- decoder ------------------------------------------------------------

    def _readout(self, s: Tensor, emb: Tensor, ctx: Tensor, training: bool, rng) -> Tensor:
        dp = self.params.decoder
        t = s @ dp.U_o + emb @ dp.V_o + ctx @ dp.C_o + dp.b_o
        t = T.dropout(t, self.cfg.dropout, training, rng)
        return t @ dp.W_v

    def _step(self, y_prev, s_prev: Tensor, es: EncoderState, training=False, rng=None):
        dp = self.params.decoder
        emb = T.embedding(self.params.tgt_embed, np.asarray(y_prev))
        s_tilde = gru_step(emb, s_prev, dp.gru1)
        ctx, alpha = attend(s_tilde, es.enc, es.mask, self.params.attention, es.proj)
        s = gru_step(ctx, s_tilde, dp.gru2)
        logits = self._readout(s, emb, ctx, training, rng)
        return logits, s, alpha

    def decode_step(self, y_prev, s_prev: Tensor, es: EncoderState, training=False, rng=None):
        """One decoder step: returns (distribution over target vocab, s_j, alpha_j)."""
        logits, s, alpha = self._step(y_prev, s_prev, es, training, rng)
        return T.softmax(logits, axis=-1), s, alpha

    def forward(self, batch, training: bool = False, rng: RngState | None = None):
        """Teacher-forced log-probabilities (b x T x V) and attention (b x T x l)."""
        es = self.encoder_state(batch.src, batch.src_mask, training, rng)
        dp = self.params.decoder
        tgt_in = batch.tgt[:, :-1]
        emb = T.embedding(self.params.tgt_embed, tgt_in)
        g1 = dp.gru1
        xz, xr, xh = emb @ g1.W_z + g1.b_z, emb @ g1.W_r + g1.b_r, emb @ g1.W_h + g1.b_h
        s = self.init_decoder_state(es.enc, es.mask)
        states, contexts, alphas = [], [], []
        for j in range(tgt_in.shape[1]):
            s_tilde = _gru_cell(xz[:, j], xr[:, j], xh[:, j], s, g1)
            ctx, alpha = attend(s_tilde, es.enc, es.mask, self.params.attention, es.proj)
            s = gru_step(ctx, s_tilde, dp.gru2)
            states.append(s)
            contexts.append(ctx)
            alphas.append(alpha)
        logits = self._readout(
            T.stack(states, axis=1), emb, T.stack(contexts, axis=1), training, rng
        )
        return T.log_softmax(logits, axis=-1), T.stack(alphas, axis=1)

    # -- search -------------------------------------------------------------

    def default_max_len(self, src_len: int) -> int:
        return max(1, min(self.cfg.max_decode_len, 2 * int(src_len) + 5))

    def greedy_decode(self, src_ids, src_mask=None, max_len: int | None = None):
        """Argmax decoding; returns a list of (ids, AlignmentMatrix), one per sentence."""
        src_ids = np.asarray(src_ids)
        if src_mask is None:
            src_mask = np.ones(src_ids.shape, dtype=bool)
        lengths = np.asarray(src_mask).sum(axis=1)
        limits = [max_len if max_len is not None else self.default_max_len(n) for n in lengths]
        with T.no_tape():
            es = self.encoder_state(src_ids, src_mask)
            s = self.init_decoder_state(es.enc, es.mask)
            b = src_ids.shape[0]
            y = np.full(b, BOS, dtype=np.int64)
            outputs = [[] for _ in range(b)]
            rows = [[] for _ in range(b)]
            active = np.ones(b, dtype=bool)
            for step in range(max(limits)):
                logits, s, alpha = self._step(y, s, es)
                logp = T.log_softmax(logits, axis=-1).data
                y = np.argmax(logp, axis=-1)
                for i in np.flatnonzero(active):
                    tok = int(y[i])
                    if tok == EOS:
                        active[i] = False
                        continue
                    outputs[i].append(tok)
                    rows[i].append(alpha.data[i, : lengths[i]].astype(np.float64))
                    if step + 1 >= limits[i]:
                        active[i] = False
                if not active.any():
                    break
        return [
            (out, AlignmentMatrix(np.stack(r) if r else np.zeros((0, int(n)))))
            for out, r, n in zip(outputs, rows, lengths)
        ]

    def beam_decode(self, src_ids, beam: int | None = None, max_len: int | None = None):
        """Beam search for one source sentence (1-D id sequence)."""
        src = np.asarray(src_ids).reshape(1, -1)
        n = src.shape[1]
        beam = beam or self.cfg.beam
        limit = max_len if max_len is not None else self.default_max_len(n)
        with T.no_tape():
            es1 = self.encoder_state(src)
            s0 = self.init_decoder_state(es1.enc, es1.mask).data
            cache = {}

            def step_fn(prev, states):
                k = len(prev)
                if k not in cache:
                    cache[k] = es1.take(np.zeros(k, dtype=np.int64))
                logits, s, alpha = self._step(prev, Tensor._wrap(states), cache[k])
                logp = T.log_softmax(logits, axis=-1).data
                return logp, s.data, alpha.data.astype(np.float64)

            best = beam_search(step_fn, s0, beam, limit)
        return best

    def translate(self, src_ids, beam: int = 1, max_len: int | None = None):
        """(ids, AlignmentMatrix) for one sentence, greedy when beam == 1."""
        if beam == 1:
            return self.greedy_decode(np.asarray(src_ids).reshape(1, -1), max_len=max_len)[0]
        hyp = self.beam_decode(src_ids, beam, max_len)
        return hyp.output_ids, hyp.alignment()
