"""Long-range dependency probe: RNL encoder vs a parameter-matched GRU-only encoder.

The distant-agreement toy task asks the decoder to repeat the first source
token after copying the sentence. Accuracy is read off the final target
position under teacher forcing, so it isolates that one long-range decision
from errors earlier in the output.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import ModelConfig, TrainConfig
from .data import Pair, make_batches
from .seq2seq import RNMT, Seq2SeqParams
from .training import train

GRU_ONLY = ["gru_fwd", "gru_bwd"]


def param_count(cfg: ModelConfig) -> int:
    return Seq2SeqParams.create(cfg, lambda shape: np.zeros(shape, dtype=np.float32)).count()


def matched_baseline(cfg: ModelConfig, search: range | None = None) -> ModelConfig:
    """GRU-only config whose parameter count is closest to ``cfg``'s.

    All four model widths move together; vocabulary sizes must already be set.
    """
    target = param_count(cfg)
    best, best_gap = None, None
    for d in search or range(max(4, cfg.hidden_dim // 2), 2 * cfg.hidden_dim + 1):
        cand = copy.deepcopy(cfg)
        cand.stack = list(GRU_ONLY)
        cand.embed_dim = cand.hidden_dim = cand.attention_dim = cand.readout_dim = d
        gap = abs(param_count(cand) - target)
        if best_gap is None or gap < best_gap:
            best, best_gap = cand, gap
    return best.validate()


def final_token_accuracy(model: RNMT, pairs, src_vocab, tgt_vocab, batch_size: int = 64) -> float:
    """Share of sentences whose last target token is the argmax under teacher forcing."""
    hits = total = 0
    with T.no_tape():
        for batch in make_batches(pairs, src_vocab, tgt_vocab, batch_size, bucketing=False):
            logp, _ = model.forward(batch)
            # target row: BOS y_1 .. y_n EOS; logp[:, j] predicts tgt[:, j + 1]
            last = batch.tgt_lengths - 3
            rows = np.arange(len(batch))
            pred = logp.data[rows, last].argmax(axis=-1)
            gold = batch.tgt[rows, last + 1]
            hits += int((pred == gold).sum())
            total += len(batch)
    return hits / total


@dataclass
class ProbeResult:
    seed: int
    rnl_acc: float
    gru_acc: float
    rnl_params: int
    gru_params: int

    @property
    def rnl_not_worse(self) -> bool:
        return self.rnl_acc >= self.gru_acc


def run_probe(
    train_pairs: list[Pair],
    test_pairs: list[Pair],
    mcfg: ModelConfig,
    tcfg: TrainConfig,
    seed: int,
) -> ProbeResult:
    """Train both encoders with identical data, seed and budget; score on ``test_pairs``."""
    tcfg = copy.deepcopy(tcfg)
    tcfg.seed = seed
    rnl = train(train_pairs, tcfg, mcfg)
    sized = copy.deepcopy(rnl.model.cfg)
    base_cfg = matched_baseline(sized)
    gru = train(train_pairs, tcfg, base_cfg)
    return ProbeResult(
        seed,
        final_token_accuracy(rnl.model, test_pairs, rnl.src_vocab, rnl.tgt_vocab),
        final_token_accuracy(gru.model, test_pairs, gru.src_vocab, gru.tgt_vocab),
        rnl.model.params.count(),
        gru.model.params.count(),
    )
