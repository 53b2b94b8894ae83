"""Declarative pipeline configuration (YAML), validated up front."""

from __future__ import annotations

import os
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .corpus import ColumnSchema, DEFAULT_CUTOFF
from .ensemble import DEFAULT_THRESHOLD_GRID
from .errors import InputError
from .text_prep import DEFAULT_MAX_LEN, EMBEDDING_ALIASES


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SchemaConfig(_Strict):
    par_id: int = 0
    art_id: int = 1
    keyword: int = 2
    country_code: int = 3
    text: int = 4
    label: Optional[int] = 5
    header: bool | Literal["auto"] = "auto"
    skip_lines: int = 0

    def to_schema(self) -> ColumnSchema:
        return ColumnSchema(**self.model_dump())


class DataConfig(_Strict):
    corpus: Path
    # optional separate test file, possibly unlabelled
    test: Optional[Path] = None
    schema_: SchemaConfig = Field(default_factory=SchemaConfig, alias="schema")
    test_schema: Optional[SchemaConfig] = None
    cutoff: int = Field(DEFAULT_CUTOFF, ge=1, le=4)


class SplitsConfig(_Strict):
    mode: Literal["explicit", "stratified"] = "stratified"
    train_ids: Optional[Path] = None
    dev_ids: Optional[Path] = None
    test_ids: Optional[Path] = None
    fractions: dict[str, float] = Field(default_factory=lambda: {"train": 0.8, "dev": 0.2})
    seed: int = 0

    @model_validator(mode="after")
    def _check(self):
        if self.mode == "explicit" and (self.train_ids is None or self.dev_ids is None):
            raise ValueError("explicit splits need train_ids and dev_ids")
        if self.mode == "stratified" and not {"train", "dev"} <= set(self.fractions):
            raise ValueError("stratified fractions need train and dev")
        return self


class TextConfig(_Strict):
    max_len: int = Field(DEFAULT_MAX_LEN, ge=1)
    min_freq: int = Field(1, ge=1)


class EmbeddingSource(_Strict):
    path: Optional[Path] = None
    format: Literal["text-vec", "word2vec-binary"] = "text-vec"


def _default_embeddings() -> dict[str, EmbeddingSource]:
    return {
        "google_news": EmbeddingSource(format="word2vec-binary"),
        "glove_word": EmbeddingSource(),
        "glove_twitter": EmbeddingSource(),
        "fasttext": EmbeddingSource(),
    }


class EmbeddingsConfig(_Strict):
    sources: dict[str, EmbeddingSource] = Field(default_factory=_default_embeddings)
    # width of the random table used when an alias has no file
    random_dim: int = Field(300, ge=1)


class CnnGrid(_Strict):
    seeds: list[int] = [0, 1, 2]
    embeddings: list[str] = list(EMBEDDING_ALIASES)
    learning_rates: list[float] = [1e-3]
    filter_widths: list[int] = [2, 3, 4]
    filters_per_width: int = Field(2, ge=1, le=300)
    dropout_rate: float = Field(0.5, ge=0, le=1)
    max_epochs: int = 35
    batch_size: int = Field(32, ge=1)


class BilstmGrid(_Strict):
    seeds: list[int] = [0, 1, 2]
    embeddings: list[str] = list(EMBEDDING_ALIASES)
    learning_rates: list[float] = [1e-3]
    hidden_sizes: list[int] = [256]
    dropout_rate: float = Field(0.0, ge=0, le=1)
    max_epochs: int = 35
    batch_size: int = Field(32, ge=1)


class TransformerGrid(_Strict):
    seeds: list[int] = list(range(11))
    step_sizes: list[int] = [2, 3]
    gamma: float = Field(0.5, gt=0, le=1)
    learning_rates: list[float] = [2e-5]
    encoder_id: str = "roberta-base"
    max_tokens: int = Field(512, ge=3)
    max_epochs: int = 20
    batch_size: int = Field(8, ge=1)


class GridConfig(_Strict):
    cnn: Optional[CnnGrid] = Field(default_factory=CnnGrid)
    bilstm: Optional[BilstmGrid] = Field(default_factory=BilstmGrid)
    transformer: Optional[TransformerGrid] = Field(default_factory=TransformerGrid)


class EnsembleRule(_Strict):
    top: int = Field(5, ge=1)
    family: Optional[Literal["cnn", "bilstm", "transformer"]] = None
    add: dict[Literal["cnn", "bilstm", "transformer"], int] = Field(default_factory=dict)


def _default_ensembles() -> dict[str, EnsembleRule]:
    return {
        "ensemble1": EnsembleRule(top=5),
        "ensemble2": EnsembleRule(top=5, add={"cnn": 1, "bilstm": 1}),
    }


class SweepConfig(_Strict):
    n_max: int = Field(30, ge=1)
    frozen_threshold: Optional[float] = Field(None, gt=0, lt=1)


class PipelineConfig(_Strict):
    seed: int = 0
    output_root: Path = Path("out")
    data: DataConfig
    splits: SplitsConfig = Field(default_factory=SplitsConfig)
    text: TextConfig = Field(default_factory=TextConfig)
    embeddings: EmbeddingsConfig = Field(default_factory=EmbeddingsConfig)
    grid: GridConfig = Field(default_factory=GridConfig)
    threshold_grid: list[float] = list(DEFAULT_THRESHOLD_GRID)
    ensembles: dict[str, EnsembleRule] = Field(default_factory=_default_ensembles)
    sweep: SweepConfig = Field(default_factory=SweepConfig)

    @field_validator("threshold_grid")
    @classmethod
    def _grid_in_unit_interval(cls, v):
        if not v or any(not 0 < t < 1 for t in v):
            raise ValueError("thresholds must be a non-empty list inside (0, 1)")
        return v

    def referenced_paths(self) -> list[tuple[str, Path]]:
        out = [("data.corpus", self.data.corpus)]
        if self.data.test is not None:
            out.append(("data.test", self.data.test))
        for name in ("train_ids", "dev_ids", "test_ids"):
            p = getattr(self.splits, name)
            if p is not None:
                out.append((f"splits.{name}", p))
        for alias, src in self.embeddings.sources.items():
            if src.path is not None:
                out.append((f"embeddings.sources.{alias}.path", src.path))
        return out


def _format_validation_error(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{loc}: {err['msg']}")
    return "invalid config:\n  " + "\n  ".join(lines)


def _resolve(base: Path, p: Path | None) -> Path | None:
    if p is None:
        return None
    p = Path(os.path.expanduser(str(p)))
    return p if p.is_absolute() else (base / p)


def load_config(path: str | Path, output_root: str | Path | None = None, check_paths: bool = True) -> PipelineConfig:
    """Parse and validate a YAML config. Relative paths resolve against the config's directory."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise InputError(f"{path}: not valid YAML: {exc}") from exc
    try:
        cfg = PipelineConfig.model_validate(raw)
    except ValidationError as exc:
        raise InputError(_format_validation_error(exc)) from None

    base = path.resolve().parent
    cfg.data.corpus = _resolve(base, cfg.data.corpus)
    cfg.data.test = _resolve(base, cfg.data.test)
    for name in ("train_ids", "dev_ids", "test_ids"):
        setattr(cfg.splits, name, _resolve(base, getattr(cfg.splits, name)))
    for src in cfg.embeddings.sources.values():
        src.path = _resolve(base, src.path)
    cfg.output_root = Path(output_root) if output_root is not None else _resolve(base, cfg.output_root)

    unknown = set()
    for fam in (cfg.grid.cnn, cfg.grid.bilstm):
        if fam is not None:
            unknown |= set(fam.embeddings) - set(cfg.embeddings.sources)
    if unknown:
        raise InputError(f"grid references undefined embedding aliases: {', '.join(sorted(unknown))}")
    if check_paths:
        for key, p in cfg.referenced_paths():
            if not p.exists():
                raise InputError(f"{key}: path does not exist: {p}")
    return cfg
