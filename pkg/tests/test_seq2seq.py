import math

import numpy as np
import pytest

from rnmt import tensor as T
from rnmt.data import BOS, EOS, Batch
from rnmt.errors import ContractError, DimensionError
from rnmt.layers import named_parameters
from rnmt.seq2seq import (
    AlignmentMatrix,
    AttentionParams,
    attend,
    beam_search,
    extract_alignment,
)
from rnmt.tensor import Tensor
from rnmt.training import batch_loss, nll_loss

from oracles import beam_on_table, exhaustive_best, make_synthetic, random_src, tiny_model


# -- attention ------------------------------------------------------------


def test_attend_single_position():
    ap = AttentionParams.create(3, 4, 5, lambda s: np.random.default_rng(0).normal(size=s))
    enc = Tensor(np.random.default_rng(1).normal(size=(2, 1, 4)))
    ctx, alpha = attend(Tensor(np.ones((2, 3))), enc, None, ap)
    np.testing.assert_array_equal(alpha.data, [[1.0], [1.0]])
    np.testing.assert_allclose(ctx.data, enc.data[:, 0], atol=1e-15)


def test_attend_zero_v_gives_uniform_over_unmasked():
    ap = AttentionParams.create(3, 4, 5, lambda s: np.random.default_rng(2).normal(size=s))
    ap.v_a.data[:] = 0.0
    mask = np.array([[1, 1, 1, 1], [1, 1, 0, 0]], dtype=bool)
    _, alpha = attend(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 4, 4))), mask, ap)
    np.testing.assert_allclose(alpha.data, [[0.25] * 4, [0.5, 0.5, 0, 0]])
    assert alpha.data[1, 2] == 0.0 and alpha.data[1, 3] == 0.0


def test_attend_hand_computed_two_positions():
    ap = AttentionParams(
        Tensor([[0.5], [-0.25]]),  # W_a: 2 -> 1
        Tensor([[1.0], [2.0]]),  # U_a: 2 -> 1
        Tensor([1.5]),
    )
    s = np.array([0.4, 0.8])
    h1, h2 = np.array([0.1, -0.3]), np.array([0.7, 0.2])
    q = 0.4 * 0.5 + 0.8 * -0.25
    e1 = 1.5 * math.tanh(q + 0.1 * 1.0 + -0.3 * 2.0)
    e2 = 1.5 * math.tanh(q + 0.7 * 1.0 + 0.2 * 2.0)
    a1 = math.exp(e1) / (math.exp(e1) + math.exp(e2))
    ctx, alpha = attend(Tensor(s[None]), Tensor(np.stack([h1, h2])[None]), None, ap)
    np.testing.assert_allclose(alpha.data[0], [a1, 1 - a1], atol=1e-10, rtol=0)
    np.testing.assert_allclose(ctx.data[0], a1 * h1 + (1 - a1) * h2, atol=1e-10, rtol=0)


def test_attend_dimension_error():
    ap = AttentionParams.create(3, 4, 5, lambda s: np.zeros(s))
    with pytest.raises(DimensionError):
        attend(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 4, 4))), None, ap)


# -- encoder --------------------------------------------------------------


def test_encode_single_token_shape():
    m = tiny_model()
    assert m.encode(np.array([[5]])).shape == (1, 1, 8)


def test_encode_rejects_empty_or_out_of_vocab():
    m = tiny_model()
    with pytest.raises(ContractError):
        m.encode(np.array([[5, 6]]), np.zeros((1, 2), dtype=bool))
    with pytest.raises(ContractError):
        m.encode(np.array([[10]]))


def test_encode_degenerates_to_gru_stack_when_rnl_is_zero():
    full = tiny_model(seed=3)
    gru_only = tiny_model(seed=3, stack=["gru_fwd", "gru_bwd"])
    gru_only.params.src_embed.data = full.params.src_embed.data
    p, q = full.params.encoder, gru_only.params.encoder
    q.layers[0], q.layers[1] = p.layers[0], p.layers[2]
    for tag, layer in zip(full.cfg.stack, p.layers):
        if tag == "rnl":
            for _, t in named_parameters(layer):
                t.data[:] = 0.0
    d = 8
    for enc in (p, q):
        for k, lin in enumerate(enc.dense):
            lin.W.data[:] = 0.0
            lin.W.data[k * d :, :] = np.eye(d)
            lin.b.data[:] = 0.0
    ids, mask = random_src(np.random.default_rng(4), 3)
    np.testing.assert_allclose(full.encode(ids, mask).data, gru_only.encode(ids, mask).data, atol=1e-15)


def test_encode_batch_consistency():
    m = tiny_model(seed=5)
    ids, mask = random_src(np.random.default_rng(6), 4, 2, 7)
    ids[2] = ids[1]
    mask[2] = mask[1]
    out = m.encode(ids, mask).data
    assert np.array_equal(out[1], out[2])
    perm = [3, 0, 2, 1]
    np.testing.assert_allclose(m.encode(ids[perm], mask[perm]).data, out[perm], atol=1e-14)
    n = int(mask[0].sum())
    alone = m.encode(ids[:1, :n]).data
    np.testing.assert_allclose(out[0, :n], alone[0], atol=1e-12)
    assert np.array_equal(out[0, n:], np.zeros_like(out[0, n:]))


# -- decoder --------------------------------------------------------------


def test_init_decoder_state_cases():
    m = tiny_model(seed=7)
    enc = Tensor(np.random.default_rng(8).normal(size=(2, 3, 8)))
    mask = np.array([[1, 1, 1], [1, 0, 0]], dtype=bool)
    s = m.init_decoder_state(enc, mask).data
    for i in range(2):
        rows = [enc.data[i, k] for k in range(3) if mask[i, k]]
        mean = sum(rows) / len(rows)
        np.testing.assert_allclose(s[i], np.tanh(mean @ m.params.W_init.data), atol=1e-14)
    np.testing.assert_allclose(s[1], np.tanh(enc.data[1, 0] @ m.params.W_init.data), atol=1e-14)
    m.params.W_init.data[:] = 0.0
    assert np.array_equal(m.init_decoder_state(enc, mask).data, np.zeros((2, 8)))


def test_decode_step_distribution_and_determinism():
    m = tiny_model(seed=9)
    ids, mask = random_src(np.random.default_rng(10), 3)
    es = m.encoder_state(ids, mask)
    s0 = m.init_decoder_state(es.enc, es.mask)
    y = np.full(3, BOS)
    d1, s1, a1 = m.decode_step(y, s0, es)
    d2, s2, a2 = m.decode_step(y, s0, es)
    np.testing.assert_allclose(d1.data.sum(axis=-1), 1.0, atol=1e-6)
    assert np.array_equal(d1.data, d2.data) and np.array_equal(s1.data, s2.data)
    assert np.array_equal(a1.data, a2.data)
    assert (a1.data[~mask] == 0).all()


def test_teacher_forced_nll_matches_stepwise_oracle():
    m = tiny_model(seed=11)
    src = np.array([[4, 5, 6], [7, 8, 0]])
    tgt = np.array([[BOS, 5, 6, EOS], [BOS, 7, EOS, 0]])
    batch = Batch(src, tgt, np.array([3, 2]), np.array([4, 3]), [0, 1])
    es = m.encoder_state(src, batch.src_mask)
    s = m.init_decoder_state(es.enc, es.mask)
    logs = []
    for j in range(3):
        dist, s, _ = m.decode_step(tgt[:, j], s, es)
        for i in range(2):
            if batch.tgt_mask[i, j + 1]:
                logs.append(math.log(dist.data[i, tgt[i, j + 1]]))
    oracle = -sum(logs) / len(logs)
    assert batch_loss(m, batch).item() == pytest.approx(oracle, abs=1e-12)
    logp, alphas = m.forward(batch)
    assert alphas.shape == (2, 3, 3)
    dists = T.exp(logp)
    assert nll_loss(dists, tgt[:, 1:], batch.tgt_mask[:, 1:]).item() == pytest.approx(oracle, abs=1e-12)


# -- search ---------------------------------------------------------------


def test_greedy_max_len_one():
    m = tiny_model(seed=12)
    (ids, am), = m.greedy_decode(np.array([[4, 5, 6]]), max_len=1)
    assert len(ids) <= 1
    assert am.weights.shape == (len(ids), 3)


def test_default_max_len():
    m = tiny_model()
    assert m.default_max_len(3) == 11
    assert m.default_max_len(200) == m.cfg.max_decode_len


@pytest.mark.parametrize("seed", range(5))
def test_beam_one_equals_greedy(seed):
    m = tiny_model(seed=seed, scale=0.8)
    rng = np.random.default_rng(seed)
    for _ in range(4):
        n = int(rng.integers(1, 7))
        src = rng.integers(4, 10, size=n)
        (g_ids, g_am), = m.greedy_decode(src[None])
        hyp = m.beam_decode(src, beam=1)
        assert hyp.output_ids == g_ids
        np.testing.assert_allclose(hyp.alignment().weights.reshape(g_am.weights.shape), g_am.weights)


def test_beam_score_not_below_greedy_on_random_models():
    worse = 0
    for seed in range(6):
        m = tiny_model(seed=seed, scale=0.8)
        src = np.random.default_rng(seed).integers(4, 10, size=5)
        g = m.beam_decode(src, beam=1)
        b = m.beam_decode(src, beam=5)
        worse += b.score < g.score - 1e-12
    assert worse == 0


@pytest.mark.parametrize("seed", range(10))
def test_beam_four_matches_exhaustive_optimum(seed):
    table = make_synthetic(np.random.default_rng(seed))
    seq, score = exhaustive_best(table)
    hyp = beam_on_table(table, 4)
    assert hyp.tokens == seq
    assert hyp.score == pytest.approx(score, abs=1e-12)


def test_synthetic_cases_are_not_greedy_solvable():
    misses = 0
    for seed in range(30):
        table = make_synthetic(np.random.default_rng(seed))
        seq, _ = exhaustive_best(table)
        misses += beam_on_table(table, 1).tokens != seq
    assert misses > 0


def test_beam_search_argument_errors():
    with pytest.raises(ContractError):
        beam_search(lambda p, s: None, None, 0, 5)


# -- alignment ------------------------------------------------------------


def test_extract_alignment_cases():
    assert extract_alignment(AlignmentMatrix(np.eye(3) * 0.8 + 0.05)) == [(1, 1), (2, 2), (3, 3)]
    assert extract_alignment(AlignmentMatrix(np.array([[0.2, 0.5, 0.3]]))) == [(1, 2)]
    assert extract_alignment(AlignmentMatrix(np.array([[0.5, 0.5]]))) == [(1, 1)]


def test_extract_alignment_monotone_rescaling_invariant():
    w = np.random.default_rng(0).dirichlet(np.ones(5), size=4)
    base = extract_alignment(AlignmentMatrix(w))
    assert extract_alignment(AlignmentMatrix(np.exp(3 * w) + 1)) == base
    assert extract_alignment(AlignmentMatrix(np.sqrt(w))) == base


def test_greedy_alignment_rows_are_stochastic():
    m = tiny_model(seed=13, scale=0.8)
    ids, mask = random_src(np.random.default_rng(14), 5)
    for (out, am), n in zip(m.greedy_decode(ids, mask), mask.sum(axis=1)):
        assert am.weights.shape == (len(out), n)
        if len(out):
            np.testing.assert_allclose(am.weights.sum(axis=1), 1.0, atol=1e-6)


# -- parameters -----------------------------------------------------------


def test_parameter_names_unique_and_counted():
    m = tiny_model()
    names = [n for n, _ in m.params.named()]
    assert len(names) == len(set(names))
    assert m.params.count() == sum(t.data.size for _, t in m.params.named())
    assert "encoder.layers.1.gp.layers.0.W" in names
