"""Command-line interface: ``rnmt <command> ...``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure (non-finite values or a failed gradient check).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint
from .config import PROFILES, load_run_config
from .data import TOY_TASKS, ToySpec, gen_toy, load_parallel, write_parallel
from .errors import ConfigError, ContractError, DataFormatError, NumericError
from .evaluation import (
    alignment_tsv,
    bleu,
    corpus_aer,
    format_links,
    length_binned_bleu,
    parse_links,
    read_alignments,
    render_alignment,
)

logger = logging.getLogger("rnmt")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _read_lines(path) -> list[list[str]]:
    try:
        return [line.split() for line in Path(path).read_text(encoding="utf-8").splitlines()]
    except (OSError, UnicodeDecodeError) as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from exc


def _open_out(path):
    if path is None or path == "-":
        return sys.stdout
    return open(path, "w", encoding="utf-8")


# --------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    from .training import train

    run = load_run_config(args.config)
    paths = run.paths
    for key in ("train_src", "train_tgt", "output_dir"):
        if key not in paths:
            raise ConfigError(f"[paths] needs {key}")
    if args.seed is not None:
        run.train.seed = args.seed
    pairs, _ = load_parallel(paths["train_src"], paths["train_tgt"], run.train.max_len)
    if not pairs:
        raise DataFormatError("no usable training pairs")
    valid = None
    if "valid_src" in paths or "valid_tgt" in paths:
        if not ("valid_src" in paths and "valid_tgt" in paths):
            raise ConfigError("valid_src and valid_tgt must be given together")
        valid, _ = load_parallel(paths["valid_src"], paths["valid_tgt"], run.train.max_len)
    res = train(pairs, run.train, run.model, valid, paths["output_dir"])
    print(f"trained {res.epochs} epochs ({res.steps} steps); checkpoint {res.checkpoint}")
    return EXIT_OK


def _decode_all(model, src_vocab, sentences, beam, max_len):
    for tokens in sentences:
        if not tokens:
            yield [], None
            continue
        ids, am = model.translate(np.array(src_vocab.encode(tokens)), beam, max_len)
        yield ids, am


def cmd_translate(args) -> int:
    model, sv, tv = load_checkpoint(args.checkpoint)
    beam = args.beam or model.cfg.beam
    if beam < 1:
        raise ConfigError("--beam must be >= 1")
    sentences = _read_lines(args.input)
    dump = open(args.dump_align, "w", encoding="utf-8") if args.dump_align else None
    out = _open_out(args.output)
    try:
        for k, (ids, am) in enumerate(_decode_all(model, sv, sentences, beam, args.max_len), 1):
            out.write(" ".join(tv.decode(ids)) + "\n")
            if dump is not None and am is not None:
                dump.write(alignment_tsv(am, k))
            elif dump is not None:
                dump.write(f"# sentence {k}\n\n")
    finally:
        if dump is not None:
            dump.close()
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def cmd_align(args) -> int:
    model, sv, tv = load_checkpoint(args.checkpoint)
    sentences = _read_lines(args.input)
    out = _open_out(args.output)
    try:
        for k, (ids, am) in enumerate(_decode_all(model, sv, sentences, args.beam, args.max_len), 1):
            if args.format == "links":
                out.write((format_links((s, t) for t, s in am.links) if am is not None else "") + "\n")
            elif args.format == "tsv":
                out.write(alignment_tsv(am, k) if am is not None else f"# sentence {k}\n\n")
            else:
                out.write(f"# sentence {k}\n")
                if am is not None and ids:
                    out.write(render_alignment(am, sentences[k - 1], tv.decode(ids)) + "\n")
                out.write("\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def cmd_align_eval(args) -> int:
    golds = read_alignments(args.gold)
    try:
        lines = Path(args.pred).read_text(encoding="utf-8").splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise DataFormatError(f"cannot read {args.pred}: {exc}") from exc
    preds = [parse_links(line).possible for line in lines]
    if len(preds) != len(golds):
        raise DataFormatError(f"{len(preds)} predicted vs {len(golds)} gold sentences")
    try:
        score = corpus_aer(preds, golds)
    except ContractError as exc:
        raise DataFormatError(str(exc)) from exc
    print(f"AER = {100 * score:.2f}")
    return EXIT_OK


def cmd_score(args) -> int:
    hyps, refs = _read_lines(args.hyp), _read_lines(args.ref)
    if len(hyps) != len(refs):
        raise DataFormatError(f"{len(hyps)} hypotheses vs {len(refs)} references")
    kw = dict(case_sensitive=not args.case_insensitive, smooth=args.smooth)
    rep = bleu(hyps, refs, **kw)
    print(rep.as_text())
    if args.tsv:
        print(rep.TSV_HEADER)
        print(rep.as_tsv())
    if args.bins:
        if not args.src:
            raise ConfigError("--bins needs --src (bins are by source length)")
        srcs = _read_lines(args.src)
        if len(srcs) != len(hyps):
            raise DataFormatError("source file is not line-aligned with hypotheses")
        try:
            edges = [float(v) for v in args.bins.split(",") if v.strip()]
        except ValueError as exc:
            raise ConfigError(f"bad --bins {args.bins!r}") from exc
        print("low\thigh\tcount\tbleu")
        for b in length_binned_bleu(hyps, refs, srcs, edges, **kw):
            print(f"{b.low:g}\t{b.high:g}\t{b.count}\t{b.report.bleu:.2f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite

    res = run_suite(args.profile, args.seed, max_entries=None if args.full else args.entries)
    for line in res.lines():
        print(line)
    status = "PASS" if res.passed else "FAIL"
    print(f"{status} gradcheck profile={args.profile} seconds={res.seconds:.1f}")
    return EXIT_OK if res.passed else EXIT_NUMERIC


def cmd_toygen(args) -> int:
    spec = ToySpec(args.task, args.vocab, args.min_len, args.max_len, args.pairs, args.seed, args.lexicon_seed)
    pairs = gen_toy(spec)
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    write_parallel(pairs, f"{prefix}.src", f"{prefix}.tgt")
    print(f"wrote {len(pairs)} pairs to {prefix}.src / {prefix}.tgt")
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rnmt", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train from an INI run config")
    p.add_argument("config")
    p.add_argument("--seed", type=int, default=None, help="override [train] seed")
    p.set_defaults(func=cmd_train)

    def decode_flags(p, beam_default):
        p.add_argument("checkpoint")
        p.add_argument("input", help="tokenised source, one sentence per line")
        p.add_argument("--beam", type=int, default=beam_default)
        p.add_argument("--max-len", type=int, default=None)
        p.add_argument("-o", "--output", default=None)

    p = sub.add_parser("translate", help="translate a source file")
    decode_flags(p, None)
    p.add_argument("--dump-align", default=None, help="write attention matrices as TSV")
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("align", help="attention alignments for a source file")
    decode_flags(p, 1)
    p.add_argument("--format", choices=("text", "links", "tsv"), default="text")
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("align-eval", help="AER of predicted links against gold")
    p.add_argument("pred")
    p.add_argument("gold")
    p.set_defaults(func=cmd_align_eval)

    p = sub.add_parser("score", help="corpus BLEU")
    p.add_argument("hyp")
    p.add_argument("ref")
    p.add_argument("--case-insensitive", action="store_true")
    p.add_argument("--smooth", action="store_true", help="add-one smoothing for n >= 2")
    p.add_argument("--bins", default=None, help="comma-separated source-length bin edges")
    p.add_argument("--src", default=None, help="source file for --bins")
    p.add_argument("--tsv", action="store_true")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--profile", choices=PROFILES, default="small")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--entries", type=int, default=32, help="coordinates sampled per model tensor")
    p.add_argument("--full", action="store_true", help="check every coordinate (slow)")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("toygen", help="write a synthetic parallel corpus")
    p.add_argument("--task", choices=TOY_TASKS, default="copy")
    p.add_argument("--vocab", type=int, default=20)
    p.add_argument("--min-len", type=int, default=3)
    p.add_argument("--max-len", type=int, default=10)
    p.add_argument("--pairs", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lexicon-seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output prefix; writes PREFIX.src and PREFIX.tgt")
    p.set_defaults(func=cmd_toygen)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataFormatError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
