import math

import numpy as np
import pytest

from rnmt import tensor as T
from rnmt.checkpoint import load_checkpoint, save_checkpoint
from rnmt.config import ModelConfig, TrainConfig
from rnmt.data import ToySpec, build_vocab, gen_toy, make_batches
from rnmt.errors import ConfigError, ContractError, DataFormatError, NumericError
from rnmt.layers import named_buffers
from rnmt.seq2seq import RNMT
from rnmt.tensor import RngState, Tape, Tensor
from rnmt.training import (
    METRIC_HEADER,
    AdadeltaState,
    adadelta_step,
    batch_loss,
    clip_by_global_norm,
    init_params,
    nll_loss,
    train,
)


def tiny_cfg(**kw):
    base = dict(
        embed_dim=8, hidden_dim=8, attention_dim=8, readout_dim=8, gp_width=4,
        convs=[(1, 4), (3, 4)], batch_norm=True, src_vocab=14, tgt_vocab=14,
        dropout=0.2, precision="float64",
    )
    base.update(kw)
    return ModelConfig(**base).validate()


# -- initialisation -------------------------------------------------------


def test_init_range_and_determinism():
    cfg = tiny_cfg()
    a = init_params(cfg, RngState(3))
    b = init_params(cfg, RngState(3))
    for (na, ta), (nb, tb) in zip(a.named(), b.named()):
        assert na == nb and np.array_equal(ta.data, tb.data)
        if "bn_" not in na:
            assert np.abs(ta.data).max() <= 0.1


def test_uniform_sample_statistics():
    x = RngState(0).uniform(-0.1, 0.1, (1_000_000,))
    assert x.min() >= -0.1 and x.max() <= 0.1
    se = 0.2 / math.sqrt(12) / math.sqrt(x.size)
    assert abs(x.mean()) < 3 * se


# -- loss -----------------------------------------------------------------


def test_nll_one_hot_and_uniform():
    gold = np.array([[1, 0]])
    mask = np.ones((1, 2), dtype=bool)
    one_hot = Tensor(np.eye(3)[gold])
    assert nll_loss(one_hot, gold, mask).item() == 0.0
    uniform = Tensor(np.full((1, 2, 5), 0.2))
    assert nll_loss(uniform, gold, mask).item() == pytest.approx(math.log(5), abs=1e-15)


def test_nll_hand_case_and_mask():
    dists = Tensor(np.array([[[0.7, 0.3], [0.4, 0.6]], [[0.1, 0.9], [0.5, 0.5]]]))
    gold = np.array([[0, 1], [1, 0]])
    mask = np.array([[True, True], [True, False]])
    expect = -(math.log(0.7) + math.log(0.6) + math.log(0.9)) / 3
    assert nll_loss(dists, gold, mask).item() == pytest.approx(expect, abs=1e-12)
    perm = [1, 0]
    assert nll_loss(Tensor(dists.data[perm]), gold[perm], mask[perm]).item() == pytest.approx(expect, abs=1e-15)
    with pytest.raises(ContractError):
        nll_loss(dists, gold, np.zeros((2, 2), dtype=bool))


# -- optimiser ------------------------------------------------------------


def test_adadelta_first_step_hand_value():
    p = Tensor(np.array([0.0]), requires_grad=True)
    st = AdadeltaState.create([p])
    adadelta_step([p], [np.array([1.0])], st)
    assert st.sq_grad[0][0] == pytest.approx(0.05, abs=1e-15)
    assert p.data[0] == pytest.approx(-math.sqrt(1e-6) / math.sqrt(0.050001), abs=1e-15)
    assert p.data[0] == pytest.approx(-4.4721e-3, abs=1e-7)


def test_adadelta_zero_gradient_is_noop():
    p = Tensor(np.array([0.3, -0.2]), requires_grad=True)
    st = AdadeltaState.create([p])
    adadelta_step([p], [np.zeros(2)], st)
    assert p.data.tolist() == [0.3, -0.2]
    assert not st.sq_grad[0].any() and not st.sq_delta[0].any()


def test_adadelta_zero_gradient_keeps_parameters_after_history():
    p = Tensor(np.array([0.3, -0.2]), requires_grad=True)
    st = AdadeltaState.create([p])
    adadelta_step([p], [np.array([0.5, 1.0])], st)
    moved = p.data.copy()
    adadelta_step([p], [np.zeros(2)], st)
    assert np.array_equal(p.data, moved)


def test_adadelta_rejects_non_finite():
    p = Tensor(np.zeros(1), requires_grad=True)
    with pytest.raises(NumericError):
        adadelta_step([p], [np.array([np.nan])], AdadeltaState.create([p]))


def test_clip_by_global_norm():
    g = [np.array([3.0]), np.array([4.0])]
    assert clip_by_global_norm(g, 1.0) == 5.0
    np.testing.assert_allclose(np.concatenate(g), [0.6, 0.8])
    h = [np.array([3.0])]
    clip_by_global_norm(h, 0.0)
    assert h[0][0] == 3.0


# -- training loop --------------------------------------------------------


def small_corpus(n=40, task="copy", seed=0):
    return gen_toy(ToySpec(task, 10, 2, 5, n, seed))


def test_overfit_single_batch():
    pairs = small_corpus(8)
    cfg = tiny_cfg(dropout=0.0, src_vocab=0, tgt_vocab=0)
    sv = build_vocab((s for s, _ in pairs), 50)
    tv = build_vocab((t for _, t in pairs), 50)
    cfg.src_vocab, cfg.tgt_vocab = len(sv), len(tv)
    model = RNMT(cfg, init_params(cfg, RngState(0)))
    batch = make_batches(pairs, sv, tv, 8, bucketing=False)[0]
    params = [t for _, t in model.params.named()]
    opt = AdadeltaState.create(params)
    losses = []
    for _ in range(40):
        with Tape() as tape:
            loss = batch_loss(model, batch, training=True, rng=RngState(0))
        tape.backward(loss, params)
        adadelta_step(params, [p.grad for p in params], opt)
        losses.append(loss.item())
    assert losses[-1] < losses[0] - 0.05


def run_tiny(tmp_path, name, **kw):
    tc = TrainConfig(batch_size=8, max_epochs=2, seed=4, **kw)
    return train(small_corpus(), tc, tiny_cfg(src_vocab=0, tgt_vocab=0), out_dir=tmp_path / name)


def test_train_writes_log_and_checkpoint(tmp_path):
    res = run_tiny(tmp_path, "a", val_bleu=True)
    lines = (tmp_path / "a" / "metrics.tsv").read_text().splitlines()
    assert lines[0] == METRIC_HEADER
    assert len(lines) == 3
    fields = lines[1].split("\t")
    assert fields[0] == "1" and fields[1] == "5" and len(fields) == 5
    float(fields[4])
    assert res.checkpoint.exists() and res.steps == 10


def test_train_is_deterministic(tmp_path):
    run_tiny(tmp_path, "a")
    run_tiny(tmp_path, "b")
    for name in ("metrics.tsv", "best.ckpt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_train_callback_stops(tmp_path):
    tc = TrainConfig(batch_size=8, max_epochs=5, seed=1)
    res = train(small_corpus(), tc, tiny_cfg(src_vocab=0, tgt_vocab=0), callback=lambda e, m: True)
    assert res.epochs == 1 and res.checkpoint is None


def test_train_rejects_empty_corpus():
    with pytest.raises(ConfigError):
        train([], TrainConfig(), tiny_cfg())


# -- checkpoints ----------------------------------------------------------


def trained_model(tmp_path):
    res = run_tiny(tmp_path, "ck")
    return res.model, res.src_vocab, res.tgt_vocab, res.checkpoint


def test_checkpoint_roundtrip_byte_identical(tmp_path):
    model, sv, tv, _ = trained_model(tmp_path)
    path = save_checkpoint(tmp_path / "now.ckpt", model, sv, tv)
    loaded, sv2, tv2 = load_checkpoint(path)
    assert sv2 == sv and tv2 == tv and loaded.cfg == model.cfg
    assert loaded.params.count() == model.params.count()
    again = save_checkpoint(tmp_path / "again.ckpt", loaded, sv2, tv2)
    assert again.read_bytes() == path.read_bytes()
    for (_, a, attr), (_, b, _) in zip(named_buffers(model.params), named_buffers(loaded.params)):
        np.testing.assert_allclose(getattr(a, attr), getattr(b, attr), rtol=1e-6)


def test_checkpoint_restores_model_outputs(tmp_path):
    model, sv, tv, path = trained_model(tmp_path)
    save_checkpoint(tmp_path / "now.ckpt", model, sv, tv)
    loaded, _, _ = load_checkpoint(tmp_path / "now.ckpt")
    src = np.array([[4, 5, 6]])
    with T.no_tape():
        a = model.greedy_decode(src)[0][0]
        b = loaded.greedy_decode(src)[0][0]
    assert a == b


def test_checkpoint_mismatch_and_corruption(tmp_path):
    _, _, _, path = trained_model(tmp_path)
    raw = path.read_bytes()
    bad = raw.replace(b'"gp_width": 4', b'"gp_width": 5', 1)
    (tmp_path / "shape.ckpt").write_bytes(bad)
    with pytest.raises(ConfigError):
        load_checkpoint(tmp_path / "shape.ckpt")
    (tmp_path / "magic.ckpt").write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(DataFormatError):
        load_checkpoint(tmp_path / "magic.ckpt")
    (tmp_path / "short.ckpt").write_bytes(raw[:-4])
    with pytest.raises(DataFormatError):
        load_checkpoint(tmp_path / "short.ckpt")
    with pytest.raises(DataFormatError):
        load_checkpoint(tmp_path / "missing.ckpt")
