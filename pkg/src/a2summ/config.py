"""Run configuration: one flat, typed JSON object per run.

Every key of :class:`RunConfig` may appear at the top level of the file; keys
starting with ``gen_`` configure the synthetic generator.  Unknown keys and
wrongly typed values are errors.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .data import GenConfig
from .losses import LossWeights
from .model import ConfigError, ModelConfig


@dataclass(frozen=True)
class RunConfig:
    # model
    dim: int = 64
    heads: int = 4
    layers: int = 2
    dropout: float = 0.1
    max_positions: int = 512
    max_segments: int = 128
    # losses
    alpha: float = 0.25
    gamma: float = 2.0
    beta: float = 0.1
    lam: float = 3.0
    r: int = 16
    expansion: int = 4
    # optimizer
    lr: float = 1e-3
    weight_decay: float = 1e-3
    epochs: int = 300
    batch_size: int = 4
    grad_clip: float = 5.0
    # alignment-guided attention and segment embeddings on/off
    align: bool = True
    # selection / evaluation
    select_mode: str = "budget"
    budget_fraction: float = 0.15
    topk_fraction: float = 0.15
    f1_mode: str = "max"
    rank_mode: str = "per_annotator"
    kts_penalty: float = 1.0
    # run
    seed: int = 0
    data: str = ""
    out: str = "runs/default"
    # synthetic generator
    gen_n_train: int = 200
    gen_n_val: int = 50
    gen_n_test: int = 50
    gen_n_min: int = 40
    gen_n_max: int = 80
    gen_m_min: int = 6
    gen_m_max: int = 12
    gen_video_dim: int = 64
    gen_text_dim: int = 48
    gen_latent_dim: int = 16
    gen_n_topics: int = 8
    gen_key_fraction: float = 0.3
    gen_noise: float = 0.1
    gen_salient_strength: float = 1.0
    gen_salient_global: float = 0.5
    gen_one_sided: float = 0.5
    gen_mismatch: float = 0.0
    gen_n_annotators: int = 3
    gen_annotator_noise: float = 0.1
    gen_gaps: bool = False
    gen_words_per_sentence: int = 8
    gen_vocab_size: int = 400

    def validate(self) -> None:
        self.model_config(1, 1).validate()
        self.loss_weights().validate()
        if self.lr <= 0 or self.weight_decay < 0 or self.grad_clip <= 0:
            raise ConfigError("optimizer: lr and grad_clip must be positive, weight_decay non-negative")
        if self.epochs < 0:
            raise ConfigError("optimizer: epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("optimizer: batch_size must be >= 1")
        if self.select_mode not in ("budget", "topk"):
            raise ConfigError(f"select_mode must be 'budget' or 'topk', got {self.select_mode!r}")
        if self.f1_mode not in ("max", "mean"):
            raise ConfigError(f"f1_mode must be 'max' or 'mean', got {self.f1_mode!r}")
        if self.rank_mode not in ("per_annotator", "mean_annotator"):
            raise ConfigError(f"rank_mode must be 'per_annotator' or 'mean_annotator', got {self.rank_mode!r}")
        if not 0 < self.budget_fraction <= 1 or not 0 < self.topk_fraction <= 1:
            raise ConfigError("budget_fraction and topk_fraction must lie in (0, 1]")
        self.gen_config().validate()

    def model_config(self, video_dim: int, text_dim: int) -> ModelConfig:
        return ModelConfig(
            video_dim=video_dim,
            text_dim=text_dim,
            dim=self.dim,
            heads=self.heads,
            layers=self.layers,
            max_positions=self.max_positions,
            max_segments=self.max_segments,
            dropout=self.dropout,
        )

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.alpha, self.gamma, self.beta, self.lam, self.r, self.expansion)

    def gen_config(self) -> GenConfig:
        kw = {f.name: getattr(self, "gen_" + f.name) for f in fields(GenConfig) if hasattr(self, "gen_" + f.name)}
        return GenConfig(**kw)

    def to_dict(self) -> dict:
        return asdict(self)

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **kw)


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, value):
    t = _TYPES[key]
    if t in ("bool", bool):
        if not isinstance(value, bool):
            raise ConfigError(f"config key {key!r}: expected bool, got {value!r}")
        return value
    if t in ("int", int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"config key {key!r}: expected int, got {value!r}")
        return value
    if t in ("float", float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key {key!r}: expected number, got {value!r}")
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"config key {key!r}: expected string, got {value!r}")
    return value


def config_from_dict(d: dict, base: RunConfig | None = None) -> RunConfig:
    unknown = sorted(set(d) - set(_TYPES))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    cfg = replace(base or RunConfig(), **{k: _coerce(k, v) for k, v in d.items()})
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> RunConfig:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path}: not valid JSON ({e})") from None
    if not isinstance(d, dict):
        raise ConfigError(f"config {path}: top level must be an object")
    return config_from_dict(d)


def save_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")


# Hyperparameters per dataset family.  Only keys differing from the defaults are listed.
PRESETS: dict[str, dict] = {
    "summe": dict(lr=1e-3, weight_decay=1e-3, epochs=300, batch_size=4, layers=2, r=16, beta=0.1, lam=3.0, expansion=4,
                  select_mode="budget", f1_mode="max"),
    "tvsum": dict(lr=1e-3, weight_decay=1e-5, epochs=300, batch_size=4, layers=2, r=16, beta=0.1, lam=1.0, expansion=4,
                  select_mode="budget", f1_mode="mean"),
    "dailymail": dict(lr=2e-4, weight_decay=1e-7, epochs=100, batch_size=4, layers=2, r=8, beta=0.001, lam=0.001,
                      expansion=4, select_mode="topk", align=False),
    "cnn": dict(lr=2e-4, weight_decay=1e-5, epochs=100, batch_size=4, layers=2, r=8, beta=0.0, lam=0.0, expansion=4,
                select_mode="topk", align=False),
    "bliss": dict(lr=1e-3, weight_decay=1e-7, epochs=50, batch_size=64, layers=6, r=4, beta=0.01, lam=0.001, expansion=4,
                  select_mode="topk"),
    "synthetic": dict(dim=32, heads=2, layers=2, batch_size=8, epochs=15, r=4, expansion=1, beta=0.01, lam=0.03,
                      select_mode="topk", gen_salient_strength=0.4),
}


def preset(name: str, **overrides) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return config_from_dict({**PRESETS[name], **overrides})
