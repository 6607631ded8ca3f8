"""Typed configuration objects and YAML loading.

Every section is a dataclass; unknown keys anywhere in a config file are
rejected so that typos fail loudly instead of silently using defaults.
"""

from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    word_dim: int = 300
    entity_dim: int = 100
    text_heads: int = 20
    text_head_dim: int = 20
    entity_heads: int = 5
    entity_head_dim: int = 20
    news_dim: int = 400
    query_dim: int = 200
    count_dim: int = 100
    max_title_len: int = 30
    max_entities: int = 5
    max_history: int = 50

    @property
    def text_dim(self) -> int:
        return self.text_heads * self.text_head_dim

    @property
    def entity_out_dim(self) -> int:
        return self.entity_heads * self.entity_head_dim

    def validate(self) -> None:
        for f in dataclasses.fields(self):
            if getattr(self, f.name) < 1:
                raise ConfigError(f"model.{f.name} must be >= 1")


@dataclass
class MatchConfig:
    """Weights of the three interest scores and the ablation mask."""

    lambda_s: float = 0.7
    lambda_t: float = 0.15
    use_subtopic: bool = True
    use_topic: bool = True
    use_user: bool = True

    def validate(self) -> None:
        if not (self.lambda_s > 0 and self.lambda_t > 0):
            raise ConfigError("lambda_s and lambda_t must be positive")
        if self.lambda_s + self.lambda_t >= 1:
            raise ConfigError("lambda_s + lambda_t must be < 1")

    @property
    def lambda_g(self) -> float:
        return 1.0 - self.lambda_s - self.lambda_t

    def masked(self, subtopic: bool, topic: bool, user: bool) -> "MatchConfig":
        return dataclasses.replace(self, use_subtopic=subtopic, use_topic=topic, use_user=user)


@dataclass
class TrainConfig:
    K: int = 4
    learning_rate: float = 1e-4
    epochs: int = 5
    batch_size: int = 32
    dropout: float = 0.2
    seed: int = 0
    freeze_word_embeddings: bool = False
    grad_clip: float = 5.0
    # held-out share of train impressions used for model selection
    val_fraction: float = 0.05

    def validate(self) -> None:
        if self.K < 1:
            raise ConfigError("train.K must be >= 1")
        if not 0 <= self.dropout < 1:
            raise ConfigError("train.dropout must be in [0, 1)")
        if self.epochs < 1:
            raise ConfigError("train.epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("train.batch_size must be >= 1")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError("train.val_fraction must be in [0, 1)")


@dataclass
class SyntheticSpec:
    n_topics: int = 6
    subtopics_per_topic: int = 5
    vocab_size: int = 600
    n_news: int = 3000
    n_users: int = 2000
    # concentration of each user's interest profile; higher = fewer subtopics
    kappa: float = 8.0
    clicks_per_user: int = 30
    candidates_per_impression: int = 20
    positives_per_impression: int = 2
    impressions_per_user: int = 2
    title_len: int = 12
    background_mass: float = 0.25
    entities_per_subtopic: int = 8
    seed: int = 0

    def validate(self) -> None:
        ints = [
            "n_topics", "subtopics_per_topic", "vocab_size", "n_news", "n_users",
            "clicks_per_user", "candidates_per_impression",
            "positives_per_impression", "impressions_per_user", "title_len",
            "entities_per_subtopic",
        ]
        for name in ints:
            if getattr(self, name) < 1:
                raise ConfigError(f"synthetic.{name} must be >= 1")
        if self.kappa <= 0:
            raise ConfigError("synthetic.kappa must be > 0")
        if not 0 <= self.background_mass < 1:
            raise ConfigError("synthetic.background_mass must be in [0, 1)")
        if self.positives_per_impression >= self.candidates_per_impression:
            raise ConfigError("synthetic.positives_per_impression must leave room for negatives")


@dataclass
class DataConfig:
    news: list[str] = field(default_factory=list)
    train_behaviors: str | None = None
    test_behaviors: str | None = None
    word_vectors: str | None = None
    entity_vectors: str | None = None
    # "dev-as-test": test file is the test set, val_fraction of train is validation
    # "dev-split": the test file is split in half into validation and test
    split: str = "dev-as-test"
    synthetic: SyntheticSpec | None = None

    def validate(self) -> None:
        if self.split not in ("dev-as-test", "dev-split"):
            raise ConfigError(f"unknown data.split {self.split!r}")
        if self.synthetic is not None:
            self.synthetic.validate()
        elif not self.news:
            raise ConfigError("data.news must list at least one news.tsv (or give data.synthetic)")


@dataclass
class EvalConfig:
    tie_half: bool = False
    ndcg_ks: list[int] = field(default_factory=lambda: [5, 10])
    batch_size: int = 256


@dataclass
class RecallConfig:
    ks: list[int] = field(default_factory=lambda: list(range(100, 1001, 100)))
    # "catalog" recalls from every news; "impression" restricts to the shown candidates
    pool: str = "catalog"
    max_impressions: int | None = 500

    def validate(self) -> None:
        if self.pool not in ("catalog", "impression"):
            raise ConfigError(f"unknown recall.pool {self.pool!r}")
        if any(k < 1 for k in self.ks):
            raise ConfigError("recall.ks must be positive")


@dataclass
class AblateConfig:
    # retrain each masked variant (True) or mask scores of the full model post hoc
    retrain: bool = True


@dataclass
class SweepConfig:
    lambda_s: list[float] = field(default_factory=lambda: [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8])
    lambda_t: list[float] = field(default_factory=lambda: [0.06, 0.09, 0.12, 0.15, 0.18])
    retrain: bool = False


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    match: MatchConfig = field(default_factory=MatchConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    recall: RecallConfig = field(default_factory=RecallConfig)
    ablate: AblateConfig = field(default_factory=AblateConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    output_dir: str = "runs/default"
    seeds: list[int] = field(default_factory=lambda: [0])

    def validate(self) -> "ExperimentConfig":
        self.data.validate()
        self.model.validate()
        self.train.validate()
        self.match.validate()
        self.recall.validate()
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        return self

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


def _is_dataclass_type(tp: Any) -> bool:
    return isinstance(tp, type) and dataclasses.is_dataclass(tp)


def _unwrap_optional(tp: Any) -> Any:
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if len(args) == 1:
            return args[0]
    return tp


def from_dict(cls: type, data: dict[str, Any] | None, path: str = "") -> Any:
    """Build dataclass ``cls`` from a nested mapping, rejecting unknown keys."""
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'} must be a mapping")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {path or 'config'}: {', '.join(unknown)}")
    kwargs = {}
    for key, value in data.items():
        tp = _unwrap_optional(hints[key])
        if _is_dataclass_type(tp) and value is not None:
            kwargs[key] = from_dict(tp, value, f"{path}.{key}" if path else key)
        else:
            kwargs[key] = value
    return cls(**kwargs)


def load_config(path: str | Path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh) or {}
    cfg = from_dict(ExperimentConfig, raw)
    base = Path(path).resolve().parent
    _resolve_paths(cfg.data, base)
    return cfg.validate()


def _resolve_paths(data: DataConfig, base: Path) -> None:
    def fix(p: str | None) -> str | None:
        if p is None:
            return None
        q = Path(p)
        return str(q if q.is_absolute() else base / q)

    data.news = [fix(p) for p in data.news]
    data.train_behaviors = fix(data.train_behaviors)
    data.test_behaviors = fix(data.test_behaviors)
    data.word_vectors = fix(data.word_vectors)
    data.entity_vectors = fix(data.entity_vectors)
