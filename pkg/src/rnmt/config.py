"""Model/training configuration, named profiles and the INI run-config format.

Run-config files are flat ``key = value`` INI with the sections
``[model]``, ``[train]`` and ``[paths]``. ``profile`` (in ``[model]``)
selects a preset that the remaining keys override. Unknown keys are errors.
"""

from __future__ import annotations

import configparser
import dataclasses
import json
from dataclasses import dataclass, field

from .errors import ConfigError

LAYER_TAGS = ("gru_fwd", "gru_bwd", "rnl")
PROFILES = ("small", "paper-zh-en", "paper-en-de")


@dataclass
class ModelConfig:
    profile: str = "small"
    src_vocab: int = 0
    tgt_vocab: int = 0
    embed_dim: int = 64
    hidden_dim: int = 64
    attention_dim: int = 64
    readout_dim: int = 64
    stack: list = field(default_factory=lambda: ["gru_fwd", "rnl", "gru_bwd", "rnl"])
    convs: list = field(default_factory=lambda: [(3, 24)])
    batch_norm: bool = False
    gp_width: int = 32
    gp_layers: int = 4
    out_layers: int = 2
    beam: int = 5
    max_decode_len: int = 100
    dropout: float = 0.5
    leaky_slope: float = 0.1
    precision: str = "float32"

    def __post_init__(self):
        self.stack = list(self.stack)
        self.convs = [tuple(int(v) for v in c) for c in self.convs]

    def validate(self) -> "ModelConfig":
        if any(tag not in LAYER_TAGS for tag in self.stack) or not self.stack:
            raise ConfigError(f"encoder stack must be a non-empty list of {LAYER_TAGS}")
        if self.embed_dim != self.hidden_dim:
            raise ConfigError("residual stacking needs embed_dim == hidden_dim")
        if "rnl" in self.stack:
            if not self.convs:
                raise ConfigError("an RNL needs at least one convolution")
            for k, ch in self.convs:
                if k < 1 or k % 2 == 0 or ch < 1:
                    raise ConfigError(f"bad convolution (kernel={k}, channels={ch})")
        if self.beam < 1 or self.max_decode_len < 1:
            raise ConfigError("beam and max_decode_len must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ConfigError("leaky_slope must lie in (0, 1)")
        if self.precision not in ("float32", "float64"):
            raise ConfigError("precision must be float32 or float64")
        for name in ("embed_dim", "hidden_dim", "attention_dim", "readout_dim", "gp_width"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.gp_layers < 1 or self.out_layers < 1:
            raise ConfigError("gp_layers and out_layers must be >= 1")
        return self

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        data = json.loads(text)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown model config keys {sorted(unknown)}")
        return cls(**data)


@dataclass
class TrainConfig:
    batch_size: int = 32
    max_epochs: int = 30
    seed: int = 1
    init_range: float = 0.1
    rho: float = 0.95
    eps: float = 1e-6
    validate_every: int = 1
    patience: int = 5
    clip_norm: float = 0.0
    bucket_width: int = 5
    vocab_cap: int = 1000
    max_len: int = 50
    val_bleu: bool = False

    def validate(self) -> "TrainConfig":
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.max_epochs < 1 or self.validate_every < 1:
            raise ConfigError("max_epochs and validate_every must be >= 1")
        if self.init_range <= 0:
            raise ConfigError("init_range must be positive (sampling is symmetric)")
        if not 0.0 < self.rho < 1.0 or self.eps <= 0:
            raise ConfigError("need 0 < rho < 1 and eps > 0")
        if self.clip_norm < 0:
            raise ConfigError("clip_norm must be >= 0 (0 disables clipping)")
        if self.bucket_width < 1 or self.vocab_cap < 1 or self.max_len < 1:
            raise ConfigError("bucket_width, vocab_cap and max_len must be >= 1")
        return self


def profile(name: str) -> tuple[ModelConfig, TrainConfig]:
    """Preset model/training configs.

    The two full-size profiles carry the published settings: 512-wide embeddings
    and GRUs, 30K vocabularies, batch 80, beam 10, sentence limit 50, dropout
    0.5. Zh-En stacks k=1/128ch and k=3/256ch convolutions with batch norm
    and 256-unit MLPs; En-De uses one k=3/96ch convolution and 128-unit MLPs.
    """
    if name == "small":
        return ModelConfig(profile="small").validate(), TrainConfig().validate()
    full = dict(
        embed_dim=512,
        hidden_dim=512,
        attention_dim=512,
        readout_dim=512,
        beam=10,
        dropout=0.5,
        precision="float32",
    )
    train = TrainConfig(batch_size=80, vocab_cap=30000, max_len=50, max_epochs=20)
    if name == "paper-zh-en":
        model = ModelConfig(
            profile=name, convs=[(1, 128), (3, 256)], batch_norm=True, gp_width=256, **full
        )
    elif name == "paper-en-de":
        model = ModelConfig(profile=name, convs=[(3, 96)], batch_norm=False, gp_width=128, **full)
    else:
        raise ConfigError(f"unknown profile {name!r}; choose from {PROFILES}")
    return model.validate(), train.validate()


# --------------------------------------------------------------------------
# INI run configs

PATH_KEYS = ("train_src", "train_tgt", "valid_src", "valid_tgt", "output_dir")


@dataclass
class RunConfig:
    model: ModelConfig
    train: TrainConfig
    paths: dict


def _coerce(value: str, default, key: str):
    try:
        if isinstance(default, bool):
            low = value.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
        if key == "stack":
            return [v.strip() for v in value.split(",") if v.strip()]
        if key == "convs":
            out = []
            for item in value.split(","):
                k, ch = item.strip().split(":")
                out.append((int(k), int(ch)))
            return out
        return value.strip()
    except ValueError as exc:
        raise ConfigError(f"cannot parse {key} = {value!r}") from exc


def _apply(obj, items: dict, section: str) -> None:
    fields = {f.name: f for f in dataclasses.fields(obj)}
    for key, value in items.items():
        if key not in fields or key == "profile":
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        setattr(obj, key, _coerce(value, getattr(obj, key), key))


def load_run_config(path) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except (configparser.Error, UnicodeDecodeError) as exc:
        raise ConfigError(f"unreadable config {path}: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot open config {path}: {exc}") from exc
    unknown = set(parser.sections()) - {"model", "train", "paths"}
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")
    model_items = dict(parser["model"]) if parser.has_section("model") else {}
    model, train = profile(model_items.pop("profile", "small"))
    _apply(model, model_items, "model")
    if parser.has_section("train"):
        _apply(train, dict(parser["train"]), "train")
    paths = dict(parser["paths"]) if parser.has_section("paths") else {}
    bad = set(paths) - set(PATH_KEYS)
    if bad:
        raise ConfigError(f"unknown key(s) {sorted(bad)} in [paths]")
    model.__post_init__()
    return RunConfig(model.validate(), train.validate(), paths)
