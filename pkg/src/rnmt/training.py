"""Teacher-forced maximum-likelihood training with Adadelta."""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .checkpoint import save_checkpoint
from .config import ModelConfig, TrainConfig
from .data import Pair, Vocabulary, build_vocab, encode_batch, make_batches
from .errors import ConfigError, ContractError, NumericError
from .evaluation import bleu
from .seq2seq import RNMT, Seq2SeqParams
from .tensor import RngState, Tape, Tensor

logger = logging.getLogger(__name__)

METRIC_HEADER = "epoch\tstep\tloss\tval_loss\tval_bleu"


def init_params(cfg: ModelConfig, rng: RngState, init_range: float = 0.1) -> Seq2SeqParams:
    """Every weight and bias ~ U(-init_range, init_range); batch-norm gamma=1, beta=0."""
    dtype = np.dtype(cfg.precision).type
    return Seq2SeqParams.create(cfg, lambda shape: rng.uniform(-init_range, init_range, shape, dtype))


def nll_loss(dists: Tensor, gold, mask, log_probs: bool = False) -> Tensor:
    """Mean negative log-likelihood of ``gold`` over unmasked positions.

    ``dists`` holds probabilities (or log-probabilities with ``log_probs``)
    with the vocabulary on the last axis.
    """
    gold = np.asarray(gold)
    fmask = np.asarray(mask, dtype=dists.dtype)
    count = float(fmask.sum())
    if count == 0:
        raise ContractError("nll_loss over zero unmasked positions")
    picked = T.pick(dists, gold)
    if not log_probs:
        picked = T.log(picked)
    return -T.tsum(picked * fmask) / count


@dataclass
class AdadeltaState:
    """Running averages E[g^2] and E[dx^2] per parameter (zero-initialised)."""

    sq_grad: list
    sq_delta: list
    rho: float = 0.95
    eps: float = 1e-6

    @classmethod
    def create(cls, params: Sequence[Tensor], rho: float = 0.95, eps: float = 1e-6):
        return cls(
            [np.zeros_like(p.data) for p in params],
            [np.zeros_like(p.data) for p in params],
            rho,
            eps,
        )


def adadelta_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], st: AdadeltaState) -> None:
    """In-place Adadelta update.

    E[g^2] <- rho E[g^2] + (1-rho) g^2
    dx     <- -sqrt(E[dx^2] + eps) / sqrt(E[g^2] + eps) * g
    E[dx^2] <- rho E[dx^2] + (1-rho) dx^2;  x <- x + dx
    """
    if len(params) != len(grads) or len(params) != len(st.sq_grad):
        raise ContractError("params, grads and optimizer state must align")
    for g in grads:
        if not np.isfinite(g).all():
            raise NumericError("non-finite gradient; optimizer step aborted")
    rho, eps = st.rho, st.eps
    for i, (p, g) in enumerate(zip(params, grads)):
        eg = st.sq_grad[i]
        eg *= rho
        eg += (1 - rho) * g * g
        delta = -np.sqrt(st.sq_delta[i] + eps) / np.sqrt(eg + eps) * g
        ed = st.sq_delta[i]
        ed *= rho
        ed += (1 - rho) * delta * delta
        p.data += delta.astype(p.data.dtype, copy=False)


def clip_by_global_norm(grads: list[np.ndarray], max_norm: float) -> float:
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            g *= scale
    return norm


def batch_loss(model: RNMT, batch, training: bool = False, rng: RngState | None = None) -> Tensor:
    logp, _ = model.forward(batch, training, rng)
    return nll_loss(logp, batch.tgt[:, 1:], batch.tgt_mask[:, 1:], log_probs=True)


def corpus_loss(model: RNMT, pairs, src_vocab, tgt_vocab, batch_size: int = 64) -> float:
    """Token-weighted mean NLL without dropout."""
    total = count = 0.0
    with T.no_tape():
        for batch in make_batches(pairs, src_vocab, tgt_vocab, batch_size, bucketing=False):
            n = float(batch.tgt_mask[:, 1:].sum())
            total += batch_loss(model, batch).item() * n
            count += n
    return total / count


def translate_corpus(model: RNMT, srcs, src_vocab: Vocabulary, tgt_vocab: Vocabulary,
                     batch_size: int = 64) -> list[list[str]]:
    """Greedy translations (token lists) in input order."""
    out = []
    for i in range(0, len(srcs), batch_size):
        chunk = [(s, ["x"]) for s in srcs[i : i + batch_size]]
        batch = encode_batch(chunk, src_vocab, tgt_vocab)
        for ids, _ in model.greedy_decode(batch.src, batch.src_mask):
            out.append(tgt_vocab.decode(ids))
    return out


@dataclass
class TrainResult:
    model: RNMT
    src_vocab: Vocabulary
    tgt_vocab: Vocabulary
    checkpoint: Path | None
    metric_lines: list[str] = field(default_factory=list)
    steps: int = 0
    epochs: int = 0


def train(
    pairs: Sequence[Pair],
    cfg: TrainConfig,
    mcfg: ModelConfig,
    valid_pairs: Sequence[Pair] | None = None,
    out_dir=None,
    callback: Callable[[int, RNMT], bool] | None = None,
) -> TrainResult:
    """Train from scratch; returns the final model plus best-checkpoint path and metric log.

    Validation runs every ``cfg.validate_every`` epochs on ``valid_pairs``
    (the training pairs when none are given); the checkpoint with the lowest
    validation loss is kept and training stops after ``cfg.patience``
    validations without improvement. ``callback(epoch, model)`` returning
    True also stops training.
    """
    cfg.validate()
    if not pairs:
        raise ConfigError("training corpus is empty")
    mcfg = copy.deepcopy(mcfg)
    src_vocab = build_vocab((s for s, _ in pairs), cfg.vocab_cap)
    tgt_vocab = build_vocab((t for _, t in pairs), cfg.vocab_cap)
    mcfg.src_vocab, mcfg.tgt_vocab = len(src_vocab), len(tgt_vocab)
    mcfg.validate()
    valid_pairs = list(valid_pairs) if valid_pairs else list(pairs)

    init_rng = RngState(cfg.seed)
    shuffle_rng = RngState(cfg.seed + 7919)
    dropout_rng = RngState(cfg.seed + 104729)
    with T.default_dtype(mcfg.precision):
        model = RNMT(mcfg, init_params(mcfg, init_rng, cfg.init_range))
        named = model.params.named()
        params = [t for _, t in named]
        opt = AdadeltaState.create(params, cfg.rho, cfg.eps)

        out_path = Path(out_dir) if out_dir is not None else None
        if out_path is not None:
            out_path.mkdir(parents=True, exist_ok=True)
        ckpt = out_path / "best.ckpt" if out_path is not None else None
        lines = [METRIC_HEADER]
        best, stale, step, epoch = math.inf, 0, 0, 0
        for epoch in range(1, cfg.max_epochs + 1):
            batches = make_batches(
                pairs, src_vocab, tgt_vocab, cfg.batch_size, True, shuffle_rng, cfg.bucket_width
            )
            total = tokens = 0.0
            for batch in batches:
                with Tape() as tape:
                    loss = batch_loss(model, batch, True, dropout_rng)
                tape.backward(loss, params)
                grads = [p.grad for p in params]
                if cfg.clip_norm > 0:
                    clip_by_global_norm(grads, cfg.clip_norm)
                adadelta_step(params, grads, opt)
                for p in params:
                    p.grad = None
                step += 1
                n = float(batch.tgt_mask[:, 1:].sum())
                total += loss.item() * n
                tokens += n
            train_loss = total / tokens
            stop = False
            if epoch % cfg.validate_every == 0:
                val_loss = corpus_loss(model, valid_pairs, src_vocab, tgt_vocab)
                val_bleu = "-"
                if cfg.val_bleu:
                    hyps = translate_corpus(model, [s for s, _ in valid_pairs], src_vocab, tgt_vocab)
                    val_bleu = f"{bleu(hyps, [t for _, t in valid_pairs]).bleu:.6f}"
                lines.append(f"{epoch}\t{step}\t{train_loss:.6f}\t{val_loss:.6f}\t{val_bleu}")
                logger.info(lines[-1])
                if val_loss < best:
                    best, stale = val_loss, 0
                    if ckpt is not None:
                        save_checkpoint(ckpt, model, src_vocab, tgt_vocab)
                else:
                    stale += 1
                    stop = stale >= cfg.patience
            if callback is not None and callback(epoch, model):
                stop = True
            if stop:
                break
        if out_path is not None:
            (out_path / "metrics.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
            if ckpt is not None and not ckpt.exists():
                save_checkpoint(ckpt, model, src_vocab, tgt_vocab)
    return TrainResult(model, src_vocab, tgt_vocab, ckpt, lines, step, epoch)
