import pytest

from rnmt.config import ModelConfig, TrainConfig, load_run_config, profile
from rnmt.errors import ConfigError


def test_full_size_profiles_carry_published_settings():
    zh, zh_train = profile("paper-zh-en")
    assert zh.convs == [(1, 128), (3, 256)] and zh.batch_norm and zh.gp_width == 256
    de, de_train = profile("paper-en-de")
    assert de.convs == [(3, 96)] and not de.batch_norm and de.gp_width == 128
    for cfg, tc in ((zh, zh_train), (de, de_train)):
        assert cfg.embed_dim == cfg.hidden_dim == 512
        assert cfg.beam == 10 and cfg.dropout == 0.5
        assert tc.batch_size == 80 and tc.vocab_cap == 30000 and tc.max_len == 50
        assert tc.rho == 0.95 and tc.eps == 1e-6 and tc.init_range == 0.1
        assert cfg.stack == ["gru_fwd", "rnl", "gru_bwd", "rnl"]
        assert cfg.leaky_slope == 0.1


def test_small_profile_defaults():
    cfg, tc = profile("small")
    assert cfg.hidden_dim == 64 and cfg.gp_width == 32 and cfg.convs == [(3, 24)]
    assert tc.vocab_cap == 1000 and tc.patience == 5 and tc.validate_every == 1
    assert tc.clip_norm == 0.0


def test_unknown_profile():
    with pytest.raises(ConfigError):
        profile("huge")


@pytest.mark.parametrize(
    "bad",
    [
        dict(embed_dim=32),
        dict(convs=[(2, 8)]),
        dict(stack=["lstm"]),
        dict(dropout=1.0),
        dict(precision="float16"),
        dict(leaky_slope=0.0),
    ],
)
def test_model_config_validation(bad):
    with pytest.raises(ConfigError):
        ModelConfig(**bad).validate()


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0).validate()
    with pytest.raises(ConfigError):
        TrainConfig(rho=1.0).validate()


def test_json_roundtrip():
    cfg = profile("paper-zh-en")[0]
    assert ModelConfig.from_json(cfg.to_json()) == cfg
    with pytest.raises(ConfigError):
        ModelConfig.from_json('{"nope": 1}')


def write(tmp_path, text):
    path = tmp_path / "run.ini"
    path.write_text(text, encoding="utf-8")
    return path


def test_load_run_config_overrides_profile(tmp_path):
    path = write(
        tmp_path,
        "[model]\nprofile = paper-en-de\nhidden_dim = 32\nembed_dim = 32\nconvs = 1:4, 3:8\n"
        "batch_norm = yes\nstack = gru_fwd, rnl\n"
        "[train]\nbatch_size = 7\nclip_norm = 1.5\n"
        "[paths]\ntrain_src = a.src\ntrain_tgt = a.tgt\noutput_dir = out\n",
    )
    run = load_run_config(path)
    assert run.model.profile == "paper-en-de"
    assert run.model.hidden_dim == 32 and run.model.convs == [(1, 4), (3, 8)]
    assert run.model.batch_norm is True and run.model.stack == ["gru_fwd", "rnl"]
    assert run.model.gp_width == 128
    assert run.train.batch_size == 7 and run.train.clip_norm == 1.5
    assert run.paths["train_src"] == "a.src"


@pytest.mark.parametrize(
    "text",
    [
        "[model]\nwidth = 3\n",
        "[train]\nbatch = 3\n",
        "[paths]\ncorpus = x\n",
        "[extra]\nx = 1\n",
        "[train]\nbatch_size = many\n",
        "[model]\nbatch_norm = maybe\n",
        "[model]\nconvs = 3\n",
        "not an ini file",
    ],
)
def test_load_run_config_errors(tmp_path, text):
    with pytest.raises(ConfigError):
        load_run_config(write(tmp_path, text))


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "absent.ini")
