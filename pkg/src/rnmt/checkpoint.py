"""Checkpoint files.

Layout (UTF-8 header, then binary)::

    RNMT-CHECKPOINT 1
    config <ModelConfig as one-line JSON>
    src_vocab <JSON list of non-reserved tokens>
    tgt_vocab <JSON list of non-reserved tokens>
    tensor <name> <d1,d2,...> <byte offset>
    ...
    data <total bytes>
    <raw little-endian float32 blocks, in manifest order>

Offsets are relative to the first byte after the ``data`` line. Running
batch-norm statistics are stored as ordinary named blocks.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .config import ModelConfig
from .data import Vocabulary
from .errors import ConfigError, DataFormatError
from .layers import named_buffers, named_parameters
from .seq2seq import RNMT, Seq2SeqParams

MAGIC = "RNMT-CHECKPOINT 1"
_LE32 = np.dtype("<f4")


def _entries(params: Seq2SeqParams):
    for name, t in named_parameters(params):
        yield name, t.data
    for name, owner, attr in named_buffers(params):
        yield name, getattr(owner, attr)


def save_checkpoint(path, model: RNMT, src_vocab: Vocabulary, tgt_vocab: Vocabulary) -> Path:
    path = Path(path)
    header = [
        MAGIC,
        "config " + model.cfg.to_json(),
        "src_vocab " + json.dumps(src_vocab.tokens),
        "tgt_vocab " + json.dumps(tgt_vocab.tokens),
    ]
    blobs, offset = [], 0
    for name, arr in _entries(model.params):
        blob = np.ascontiguousarray(arr, dtype=_LE32).tobytes()
        shape = ",".join(str(n) for n in arr.shape)
        header.append(f"tensor {name} {shape} {offset}")
        blobs.append(blob)
        offset += len(blob)
    header.append(f"data {offset}")
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("utf-8"))
        for blob in blobs:
            fh.write(blob)
    tmp.replace(path)
    return path


def load_checkpoint(path, precision: str | None = None):
    """Return (RNMT, src_vocab, tgt_vocab)."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DataFormatError(f"cannot read checkpoint {path}: {exc}") from exc
    pos, lines = 0, []
    while True:
        end = raw.find(b"\n", pos)
        if end < 0:
            raise DataFormatError("truncated checkpoint header")
        line = raw[pos:end].decode("utf-8")
        pos = end + 1
        lines.append(line)
        if line.startswith("data "):
            break
    if not lines or lines[0] != MAGIC:
        raise DataFormatError(f"{path} is not an RNMT checkpoint")
    fields, manifest = {}, []
    for line in lines[1:]:
        key, _, rest = line.partition(" ")
        if key == "tensor":
            name, shape, offset = rest.split(" ")
            dims = tuple(int(v) for v in shape.split(",")) if shape else ()
            manifest.append((name, dims, int(offset)))
        else:
            fields[key] = rest
    body = raw[pos:]
    if len(body) != int(fields["data"]):
        raise DataFormatError("checkpoint body length does not match its manifest")
    cfg = ModelConfig.from_json(fields["config"])
    if precision is not None:
        cfg.precision = precision
    src_vocab = Vocabulary(json.loads(fields["src_vocab"]))
    tgt_vocab = Vocabulary(json.loads(fields["tgt_vocab"]))
    if len(src_vocab) != cfg.src_vocab or len(tgt_vocab) != cfg.tgt_vocab:
        raise ConfigError("checkpoint vocabularies disagree with its config")
    dtype = np.dtype(cfg.precision)
    params = Seq2SeqParams.create(cfg, lambda shape: np.zeros(shape, dtype=dtype))
    targets = {name: t for name, t in named_parameters(params)}
    buffers = {name: (owner, attr) for name, owner, attr in named_buffers(params)}
    expected = set(targets) | set(buffers)
    found = {name for name, _, _ in manifest}
    if found != expected:
        missing, extra = sorted(expected - found), sorted(found - expected)
        raise ConfigError(f"checkpoint/config mismatch: missing {missing[:5]}, extra {extra[:5]}")
    for name, dims, offset in manifest:
        count = int(np.prod(dims)) if dims else 1
        arr = np.frombuffer(body, dtype=_LE32, count=count, offset=offset).reshape(dims)
        arr = arr.astype(dtype)
        if name in targets:
            if targets[name].shape != dims:
                raise ConfigError(f"checkpoint/config mismatch for {name}: {dims}")
            targets[name].data = arr
        else:
            owner, attr = buffers[name]
            setattr(owner, attr, arr)
    return RNMT(cfg, params), src_vocab, tgt_vocab
