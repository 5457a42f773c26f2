"""BLEU, alignment error rate, length-binned scoring and alignment rendering."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ContractError, DataFormatError, ParameterError
from .seq2seq import AlignmentMatrix, extract_alignment


@dataclass
class BleuReport:
    precisions: list[float]
    brevity_penalty: float
    bleu: float
    hyp_len: int
    ref_len: int
    matches: list[int] = field(default_factory=list)
    totals: list[int] = field(default_factory=list)

    def as_text(self) -> str:
        ps = "/".join(f"{100 * p:.1f}" for p in self.precisions)
        ratio = self.hyp_len / self.ref_len if self.ref_len else 0.0
        return (
            f"BLEU = {self.bleu:.2f}, {ps} (BP={self.brevity_penalty:.3f}, "
            f"ratio={ratio:.3f}, hyp_len={self.hyp_len}, ref_len={self.ref_len})"
        )

    def as_tsv(self) -> str:
        cols = [f"{self.bleu:.6f}"] + [f"{p:.6f}" for p in self.precisions]
        cols += [f"{self.brevity_penalty:.6f}", str(self.hyp_len), str(self.ref_len)]
        return "\t".join(cols)

    TSV_HEADER = "bleu\tp1\tp2\tp3\tp4\tbp\thyp_len\tref_len"


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(
    hyps: Sequence[Sequence[str]],
    refs: Sequence[Sequence[str]],
    case_sensitive: bool = True,
    smooth: bool = False,
    max_n: int = 4,
) -> BleuReport:
    """Corpus BLEU with one reference per segment.

    Clipped n-gram precisions, BP = min(1, exp(1 - r/c)); any zero precision
    gives 0 unless ``smooth`` (add-one on orders >= 2). An order at which
    neither hypotheses nor references contain any n-gram is left out.
    """
    if len(hyps) != len(refs):
        raise ContractError(f"{len(hyps)} hypotheses vs {len(refs)} references")
    if not hyps:
        raise ContractError("bleu over an empty corpus")
    matches, totals, ref_totals = [0] * max_n, [0] * max_n, [0] * max_n
    hyp_len = ref_len = 0
    for hyp, ref in zip(hyps, refs):
        if not case_sensitive:
            hyp = [t.lower() for t in hyp]
            ref = [t.lower() for t in ref]
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            h, r = _ngrams(hyp, n), _ngrams(ref, n)
            matches[n - 1] += sum(min(c, r[g]) for g, c in h.items())
            totals[n - 1] += max(len(hyp) - n + 1, 0)
            ref_totals[n - 1] += max(len(ref) - n + 1, 0)
    precisions, logs = [], []
    for n in range(max_n):
        if totals[n] == 0 and ref_totals[n] == 0:
            precisions.append(1.0)
            continue
        m, t = matches[n], totals[n]
        if smooth and n > 0:
            m, t = m + 1, t + 1
        p = m / t if t else 0.0
        precisions.append(p)
        logs.append(math.log(p) if p > 0 else None)
    if hyp_len == 0:
        bp = 0.0
    elif hyp_len < ref_len:
        bp = math.exp(1.0 - ref_len / hyp_len)
    else:
        bp = 1.0
    if bp == 0.0 or any(v is None for v in logs):
        score = 0.0
    else:
        score = 100.0 * bp * math.exp(sum(logs) / len(logs)) if logs else 100.0 * bp
    return BleuReport(precisions, bp, score, hyp_len, ref_len, matches, totals)


# --------------------------------------------------------------------------
# alignment error rate


@dataclass
class GoldAlignment:
    """Sure links S and possible links P as (src, tgt) pairs, 1-based; S is a subset of P."""

    sure: set
    possible: set

    def __post_init__(self):
        self.sure = set(self.sure)
        self.possible = set(self.possible) | self.sure


def token_accuracy(hyps, refs) -> float:
    """Position-wise token accuracy; the denominator is the longer of each pair."""
    if len(hyps) != len(refs):
        raise ContractError("hypothesis and reference counts differ")
    hits = sum(sum(a == b for a, b in zip(h, r)) for h, r in zip(hyps, refs))
    total = sum(max(len(h), len(r)) for h, r in zip(hyps, refs))
    if total == 0:
        raise ContractError("token accuracy undefined on empty corpora")
    return hits / total


def aer(pred, gold: GoldAlignment) -> float:
    """1 - (|A & S| + |A & P|) / (|A| + |S|)."""
    a = set(pred)
    denom = len(a) + len(gold.sure)
    if denom == 0:
        raise ContractError("AER undefined: no predicted and no sure links")
    return 1.0 - (len(a & gold.sure) + len(a & gold.possible)) / denom


def corpus_aer(preds: Sequence, golds: Sequence[GoldAlignment]) -> float:
    """Pooled AER over sentences (link counts summed before dividing)."""
    if len(preds) != len(golds):
        raise ContractError("prediction and gold sentence counts differ")
    hit_s = hit_p = n_a = n_s = 0
    for pred, gold in zip(preds, golds):
        a = set(pred)
        hit_s += len(a & gold.sure)
        hit_p += len(a & gold.possible)
        n_a += len(a)
        n_s += len(gold.sure)
    if n_a + n_s == 0:
        raise ContractError("AER undefined: no predicted and no sure links")
    return 1.0 - (hit_s + hit_p) / (n_a + n_s)


def parse_links(line: str) -> GoldAlignment:
    sure, possible = set(), set()
    for item in line.split():
        is_possible = item.endswith("p")
        body = item[:-1] if is_possible else item
        try:
            s, t = body.split("-")
            link = (int(s), int(t))
        except ValueError as exc:
            raise DataFormatError(f"bad alignment link {item!r}") from exc
        if link[0] < 1 or link[1] < 1:
            raise DataFormatError(f"alignment indices are 1-based, got {item!r}")
        (possible if is_possible else sure).add(link)
    return GoldAlignment(sure, possible)


def read_alignments(path) -> list[GoldAlignment]:
    """One sentence per line, links ``src-tgt``; a ``p`` suffix marks possible-only."""
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise DataFormatError(f"cannot read alignments {path}: {exc}") from exc
    return [parse_links(line) for line in lines]


def format_links(links) -> str:
    """(src, tgt) pairs in gold-file notation."""
    return " ".join(f"{s}-{t}" for s, t in sorted(links))


# --------------------------------------------------------------------------
# length bins


@dataclass
class BinReport:
    low: float
    high: float
    count: int
    report: BleuReport


def length_binned_bleu(hyps, refs, srcs, bin_edges: Sequence[float], **bleu_kw) -> list[BinReport]:
    """Corpus BLEU per source-length bin.

    ``bin_edges`` are interior boundaries e_1 < ... < e_k giving the bins
    (-inf, e_1), [e_1, e_2), ..., [e_k, inf); empty bins are omitted.
    """
    if not len(hyps) == len(refs) == len(srcs):
        raise ContractError("hyps, refs and srcs must be aligned")
    edges = list(bin_edges)
    if any(b <= a for a, b in zip(edges[:-1], edges[1:])):
        raise ParameterError(f"bin edges must be strictly increasing: {edges}")
    bounds = [-math.inf] + edges + [math.inf]
    out = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        idx = [i for i, s in enumerate(srcs) if lo <= len(s) < hi]
        if idx:
            rep = bleu([hyps[i] for i in idx], [refs[i] for i in idx], **bleu_kw)
            out.append(BinReport(lo, hi, len(idx), rep))
    return out


# --------------------------------------------------------------------------
# alignment rendering

SHADES = " .:-=+*#%@"


def render_alignment(am: AlignmentMatrix, src_tokens, tgt_tokens) -> str:
    """Text heat map (one character per weight decile) plus argmax links.

    Each row ends with ``<- i`` naming the argmax source position.
    """
    w = np.asarray(am.weights, dtype=np.float64)
    if w.shape != (len(tgt_tokens), len(src_tokens)):
        raise ContractError(
            f"alignment {w.shape} does not match {len(tgt_tokens)} x {len(src_tokens)} tokens"
        )
    width = max((len(t) for t in tgt_tokens), default=0)
    links = extract_alignment(am)
    lines = []
    for (j, i), tok, row in zip(links, tgt_tokens, w):
        cells = "".join(SHADES[min(int(v * 10), 9)] for v in row)
        lines.append(f"{tok:>{width}} |{cells}| <- {i}")
    lines.append(" " * width + "  " + " ".join(f"{k + 1}:{t}" for k, t in enumerate(src_tokens)))
    lines.append("links: " + " ".join(f"{i}-{j}" for j, i in links))
    return "\n".join(lines)


def alignment_tsv(am: AlignmentMatrix, sentence: int) -> str:
    rows = [f"# sentence {sentence}"]
    for row in np.asarray(am.weights):
        rows.append("\t".join(f"{v:.6f}" for v in row))
    return "\n".join(rows) + "\n\n"


def parse_alignment_tsv(text: str) -> list[np.ndarray]:
    """Inverse of concatenated :func:`alignment_tsv` blocks."""
    mats, cur = [], None
    for line in text.splitlines():
        if line.startswith("# sentence"):
            if cur is not None:
                mats.append(cur)
            cur = []
        elif line.strip():
            if cur is None:
                raise DataFormatError("alignment TSV row before any sentence header")
            cur.append([float(v) for v in line.split("\t")])
    if cur is not None:
        mats.append(cur)
    return [np.array(m, dtype=np.float64) if m else np.zeros((0, 0)) for m in mats]
