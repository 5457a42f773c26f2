"""Vocabularies, parallel-corpus loading, batching and synthetic toy tasks."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataFormatError
from .tensor import RngState

logger = logging.getLogger(__name__)

PAD, UNK, BOS, EOS = 0, 1, 2, 3
RESERVED = ("<pad>", "<unk>", "<s>", "</s>")

Pair = tuple[list[str], list[str]]


class Vocabulary:
    """Bidirectional token <-> id map; ids 0-3 are PAD, UNK, BOS, EOS."""

    def __init__(self, tokens: Sequence[str]):
        self.itos = list(RESERVED) + [t for t in tokens]
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ConfigError("vocabulary tokens must be unique and not reserved")

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi and self.stoi[token] >= len(RESERVED)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos

    @property
    def tokens(self) -> list[str]:
        return self.itos[len(RESERVED):]

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(t, UNK) if t not in RESERVED else UNK for t in tokens]

    def decode(self, ids: Iterable[int], strip: bool = True) -> list[str]:
        out = []
        for i in ids:
            i = int(i)
            if strip and i == EOS:
                break
            if strip and i in (PAD, BOS):
                continue
            out.append(self.itos[i])
        return out


def build_vocab(sentences: Iterable[Sequence[str]], cap: int) -> Vocabulary:
    """Frequency-ranked vocabulary (ties lexicographic), at most ``cap`` tokens."""
    counts = Counter()
    for sent in sentences:
        counts.update(sent)
    if not counts:
        raise ConfigError("cannot build a vocabulary from an empty corpus")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    ranked = [t for t, _ in ranked if t not in RESERVED]
    return Vocabulary(ranked[:cap])


def load_parallel(src_path, tgt_path, max_len: int = 50) -> tuple[list[Pair], int]:
    """Read line-aligned whitespace-tokenised files.

    Pairs with an empty side or a side longer than ``max_len`` are dropped;
    returns (pairs, number dropped).
    """
    try:
        src_lines = Path(src_path).read_text(encoding="utf-8").splitlines()
        tgt_lines = Path(tgt_path).read_text(encoding="utf-8").splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise DataFormatError(f"cannot read corpus: {exc}") from exc
    if len(src_lines) != len(tgt_lines):
        raise DataFormatError(
            f"line counts differ: {src_path} has {len(src_lines)}, "
            f"{tgt_path} has {len(tgt_lines)}"
        )
    pairs, dropped = [], 0
    for n, (s, t) in enumerate(zip(src_lines, tgt_lines), 1):
        s, t = s.split(), t.split()
        if not s or not t:
            logger.warning("line %d: empty side, pair dropped", n)
            dropped += 1
        elif len(s) > max_len or len(t) > max_len:
            dropped += 1
        else:
            pairs.append((s, t))
    if dropped:
        logger.info("dropped %d of %d pairs", dropped, len(src_lines))
    return pairs, dropped


def write_parallel(pairs: Sequence[Pair], src_path, tgt_path) -> None:
    Path(src_path).write_text("".join(" ".join(s) + "\n" for s, _ in pairs), encoding="utf-8")
    Path(tgt_path).write_text("".join(" ".join(t) + "\n" for _, t in pairs), encoding="utf-8")


@dataclass
class Batch:
    src: np.ndarray
    tgt: np.ndarray
    src_lengths: np.ndarray
    tgt_lengths: np.ndarray
    indices: np.ndarray

    @property
    def src_mask(self) -> np.ndarray:
        return np.arange(self.src.shape[1])[None, :] < self.src_lengths[:, None]

    @property
    def tgt_mask(self) -> np.ndarray:
        return np.arange(self.tgt.shape[1])[None, :] < self.tgt_lengths[:, None]

    def __len__(self) -> int:
        return self.src.shape[0]


def pad_ids(seqs: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    out = np.full((len(seqs), int(lengths.max())), PAD, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out, lengths


def encode_batch(
    pairs: Sequence[Pair], src_vocab: Vocabulary, tgt_vocab: Vocabulary, indices=None
) -> Batch:
    """Target rows are framed as BOS y_1 .. y_n EOS."""
    src, src_len = pad_ids([src_vocab.encode(s) for s, _ in pairs])
    tgt, tgt_len = pad_ids([[BOS] + tgt_vocab.encode(t) + [EOS] for _, t in pairs])
    if indices is None:
        indices = np.arange(len(pairs))
    return Batch(src, tgt, src_len, tgt_len, np.asarray(indices))


def make_batches(
    pairs: Sequence[Pair],
    src_vocab: Vocabulary,
    tgt_vocab: Vocabulary,
    batch_size: int,
    bucketing: bool = True,
    rng: RngState | None = None,
    bucket_width: int = 5,
) -> list[Batch]:
    """Split a corpus into padded batches; every pair appears exactly once.

    With ``rng`` the pairs are shuffled, grouped into source-length buckets
    of ``bucket_width`` (when bucketing), cut into batches and the batch
    order is shuffled again.
    """
    order = np.arange(len(pairs))
    if rng is not None:
        order = rng.permutation(len(pairs))
    if bucketing:
        keys = np.array([(len(pairs[i][0]) - 1) // bucket_width for i in order])
        order = order[np.argsort(keys, kind="stable")]
    chunks = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    if rng is not None and bucketing:
        chunks = [chunks[i] for i in rng.permutation(len(chunks))]
    return [encode_batch([pairs[i] for i in c], src_vocab, tgt_vocab, c) for c in chunks]


# --------------------------------------------------------------------------
# synthetic tasks

TOY_TASKS = ("copy", "reverse", "lexicon", "distant-agreement")


@dataclass
class ToySpec:
    task: str = "copy"
    vocab_size: int = 20
    min_len: int = 3
    max_len: int = 10
    pairs: int = 2000
    seed: int = 0
    lexicon_seed: int = 0


def toy_lexicon(vocab_size: int, seed: int) -> dict[str, str]:
    perm = RngState(seed).permutation(vocab_size)
    return {str(i): f"x{perm[i]}" for i in range(vocab_size)}


def gen_toy(spec: ToySpec) -> list[Pair]:
    """Deterministic synthetic parallel corpus.

    copy: y = x; reverse: y = reversed x; lexicon: a one-to-one token
    substitution drawn from ``lexicon_seed`` (kept apart from the sampling
    seed so held-out corpora share the mapping); distant-agreement: y = x
    followed by x's first token.
    """
    if spec.task not in TOY_TASKS:
        raise ConfigError(f"unknown toy task {spec.task!r}; choose from {TOY_TASKS}")
    if spec.vocab_size < 1 or (spec.task == "lexicon" and spec.vocab_size < 2):
        raise ConfigError(f"vocab_size {spec.vocab_size} too small for task {spec.task}")
    if not 1 <= spec.min_len <= spec.max_len or spec.pairs < 1:
        raise ConfigError("need 1 <= min_len <= max_len and pairs >= 1")
    rng = RngState(spec.seed)
    lexicon = toy_lexicon(spec.vocab_size, spec.lexicon_seed) if spec.task == "lexicon" else None
    pairs = []
    for _ in range(spec.pairs):
        n = int(rng.integers(spec.min_len, spec.max_len + 1))
        src = [str(int(v)) for v in rng.integers(0, spec.vocab_size, size=n)]
        if spec.task == "copy":
            tgt = list(src)
        elif spec.task == "reverse":
            tgt = src[::-1]
        elif spec.task == "lexicon":
            tgt = [lexicon[t] for t in src]
        else:
            tgt = src + [src[0]]
        pairs.append((src, tgt))
    return pairs
