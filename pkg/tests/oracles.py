"""Independent reference implementations shared by the test modules."""

import numpy as np

from rnmt.config import ModelConfig
from rnmt.rnl import RnlParams
from rnmt.seq2seq import RNMT, Seq2SeqParams, beam_search
from rnmt.tensor import RngState

def uniform(seed, scale=0.5):
    rng = np.random.default_rng(seed)
    return lambda shape: rng.uniform(-scale, scale, shape)



def lrelu(v, slope=0.1):
    return np.where(v >= 0, v, slope * v)



def make(d=4, convs=((3, 5),), gp=6, seed=0, bn=False):
    return RnlParams.create(d, list(convs), gp, uniform(seed), batch_norm=bn)



def naive_gp(c, p, slope=0.1):
    """Explicit double loop over (i, j) with a materialised concatenation."""
    l = c.shape[0]
    out = []
    for i in range(l):
        acc = None
        for j in range(l):
            v = np.concatenate([c[i], c[j]])
            for layer in p.gp.layers:
                v = lrelu(v @ layer.W.data + layer.b.data, slope)
            acc = v if acc is None else acc + v
        out.append(acc / l)
    return np.array(out)



def tiny_cfg(**kw):
    base = dict(
        embed_dim=8, hidden_dim=8, attention_dim=6, readout_dim=7, gp_width=4,
        convs=[(3, 4)], src_vocab=10, tgt_vocab=9, dropout=0.0, precision="float64",
    )
    base.update(kw)
    return ModelConfig(**base).validate()



def tiny_model(seed=0, scale=0.3, **kw):
    cfg = tiny_cfg(**kw)
    rng = RngState(seed)
    return RNMT(cfg, Seq2SeqParams.create(cfg, lambda s: rng.uniform(-scale, scale, s, np.dtype(cfg.precision))))



def random_src(rng, b, lmin=1, lmax=6, vocab=10):
    lengths = rng.integers(lmin, lmax + 1, size=b)
    ids = np.zeros((b, lengths.max()), dtype=np.int64)
    for i, n in enumerate(lengths):
        ids[i, :n] = rng.integers(4, vocab, size=n)
    return ids, np.arange(ids.shape[1])[None] < lengths[:, None]



def make_synthetic(rng, vocab=6, eos=0, steps=3, width=2):
    """Each step allows ``width`` content tokens; EOS is forced after ``steps`` tokens."""
    content = [t for t in range(vocab) if t not in (eos, 1)]
    table = {}

    def fill(prefix):
        row = np.full(vocab, -np.inf)
        if len(prefix) == steps:
            row[eos] = 0.0
        else:
            allowed = rng.choice(content, size=width, replace=False)
            row[allowed] = np.log(rng.dirichlet(np.ones(width)))
        table[prefix] = row
        if len(prefix) < steps:
            for t in np.flatnonzero(np.isfinite(row)):
                fill(prefix + (int(t),))

    fill(())
    return table



def exhaustive_best(table, eos=0):
    best, best_seq = -np.inf, None
    stack = [((), 0.0)]
    while stack:
        prefix, lp = stack.pop()
        row = table[prefix]
        for t in np.flatnonzero(np.isfinite(row)):
            nlp = lp + row[t]
            if t == eos:
                score = nlp / (len(prefix) + 1)
                if score > best:
                    best, best_seq = score, list(prefix) + [int(t)]
            else:
                stack.append((prefix + (int(t),), nlp))
    return best_seq, best



class Prefixes(list):
    """Row-indexable list of token prefixes (the search state of the synthetic model)."""

    def __getitem__(self, rows):
        if isinstance(rows, np.ndarray):
            return Prefixes(list.__getitem__(self, int(r)) for r in rows)
        return list.__getitem__(self, rows)



def beam_on_table(table, beam, eos=0, bos=1):
    """Run beam_search where each state is the prefix before the last emitted token."""

    def step(prev, states):
        prefixes = Prefixes(p if t == bos else p + (int(t),) for p, t in zip(states, prev))
        return np.array([table[p] for p in prefixes]), prefixes, None

    return beam_search(step, Prefixes([()]), beam, 10, bos=bos, eos=eos)

