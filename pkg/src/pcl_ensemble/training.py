"""Single-run training with best-epoch checkpointing, grid expansion and the run registry."""

from __future__ import annotations

import csv
import itertools
import json
import logging
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch
import torch.nn.functional as F
from filelock import FileLock

from .config import EmbeddingsConfig, GridConfig
from .corpus import DataSplit
from .ensemble import PredictionSet
from .errors import InputError, TrainingError
from .evaluation import MetricsReport, confusion, metrics_from_counts
from .models import (
    BiLSTMClassifier, BilstmConfig, CnnConfig, TextCNN, TransformerConfig, build_transformer,
    count_parameters, load_checkpoint, save_checkpoint,
)
from .text_prep import (
    DEFAULT_MAX_LEN, Vocabulary, build_vocab, encode_texts, load_pretrained, random_table,
)

log = logging.getLogger(__name__)

FAMILIES = ("cnn", "bilstm", "transformer")
SELECTION_THRESHOLD = 0.5
EVAL_BATCH_SIZE = 64


def set_seed(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)


def stepwise_lr(epoch: int, base_lr: float, step_size: int, gamma: float) -> float:
    """base_lr * gamma ** floor((epoch - 1) / step_size), epochs counted from 1."""
    if epoch < 1 or step_size < 1 or not 0 < gamma <= 1:
        raise ValueError("need epoch >= 1, step_size >= 1, 0 < gamma <= 1")
    return base_lr * gamma ** ((epoch - 1) // step_size)


@dataclass
class LrSchedule:
    kind: str = "constant"  # or "stepwise"
    step_size: int = 1
    gamma: float = 1.0

    def lr(self, epoch: int, base_lr: float) -> float:
        if self.kind == "constant":
            return base_lr
        return stepwise_lr(epoch, base_lr, self.step_size, self.gamma)


@dataclass
class TrainRunSpec:
    run_id: str
    family: str
    model: dict = field(default_factory=dict)
    embedding: str | None = None
    seed: int = 0
    base_lr: float = 1e-3
    lr_schedule: LrSchedule = field(default_factory=LrSchedule)
    max_epochs: int = 35
    batch_size: int = 32
    max_len: int = DEFAULT_MAX_LEN
    min_freq: int = 1

    def validate(self) -> None:
        if self.family not in FAMILIES:
            raise InputError(f"{self.run_id}: unknown family {self.family!r}")
        if self.max_epochs < 1:
            raise InputError(f"{self.run_id}: max_epochs must be >= 1")
        if self.batch_size < 1 or self.base_lr <= 0:
            raise InputError(f"{self.run_id}: batch_size and base_lr must be positive")

    def model_config(self):
        if self.family == "cnn":
            cfg = CnnConfig(**self.model)
            cfg.validate(self.max_len)
        elif self.family == "bilstm":
            cfg = BilstmConfig(**self.model)
            cfg.validate()
        else:
            cfg = TransformerConfig(**self.model)
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainRunSpec":
        d = dict(d)
        d["lr_schedule"] = LrSchedule(**d["lr_schedule"])
        return cls(**d)


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    precision: float
    recall: float
    f1: float


@dataclass
class TrainedModelRecord:
    run_id: str
    spec: TrainRunSpec
    per_epoch: list[EpochMetrics]
    best_epoch: int
    best_dev_f1: float
    checkpoint: str
    dev_predictions_path: str
    n_parameters: int = 0
    dev_predictions: PredictionSet | None = field(default=None, repr=False, compare=False)

    @property
    def family(self) -> str:
        return self.spec.family

    def to_json(self) -> str:
        d = {
            "run_id": self.run_id,
            "spec": self.spec.to_dict(),
            "per_epoch": [asdict(e) for e in self.per_epoch],
            "best_epoch": self.best_epoch,
            "best_dev_f1": self.best_dev_f1,
            "checkpoint": self.checkpoint,
            "dev_predictions": self.dev_predictions_path,
            "n_parameters": self.n_parameters,
        }
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "TrainedModelRecord":
        d = json.loads(line)
        return cls(
            run_id=d["run_id"], spec=TrainRunSpec.from_dict(d["spec"]),
            per_epoch=[EpochMetrics(**e) for e in d["per_epoch"]], best_epoch=d["best_epoch"],
            best_dev_f1=d["best_dev_f1"], checkpoint=d["checkpoint"],
            dev_predictions_path=d["dev_predictions"], n_parameters=d.get("n_parameters", 0),
        )

    def load_dev_predictions(self) -> PredictionSet:
        if self.dev_predictions is None:
            self.dev_predictions = PredictionSet.read_tsv(self.dev_predictions_path, self.run_id, "dev")
        return self.dev_predictions


# -- grid -------------------------------------------------------------------

def _lr_tag(lr: float) -> str:
    return f"lr{lr:g}"


def expand_grid(grid: GridConfig, max_len: int = DEFAULT_MAX_LEN, min_freq: int = 1) -> list[TrainRunSpec]:
    """Enumerate run specs family by family in a fixed order.

    With the default grid: CNN 4 embeddings x 3 seeds, BiLSTM 4 x 3 and
    transformer 11 seeds x 2 step sizes, i.e. 46 runs.
    """
    specs: list[TrainRunSpec] = []
    common = dict(max_len=max_len, min_freq=min_freq)
    if grid.cnn is not None:
        g = grid.cnn
        model = dict(filter_widths=list(g.filter_widths), filters_per_width=g.filters_per_width,
                     dropout_rate=g.dropout_rate)
        for emb, lr, seed in itertools.product(g.embeddings, g.learning_rates, g.seeds):
            specs.append(TrainRunSpec(
                f"cnn-{emb}-{_lr_tag(lr)}-s{seed}", "cnn", dict(model), emb, seed, lr,
                LrSchedule(), g.max_epochs, g.batch_size, **common))
    if grid.bilstm is not None:
        g = grid.bilstm
        for emb, hidden, lr, seed in itertools.product(g.embeddings, g.hidden_sizes, g.learning_rates, g.seeds):
            specs.append(TrainRunSpec(
                f"bilstm-{emb}-h{hidden}-{_lr_tag(lr)}-s{seed}", "bilstm",
                dict(hidden_size=hidden, dropout_rate=g.dropout_rate), emb, seed, lr,
                LrSchedule(), g.max_epochs, g.batch_size, **common))
    if grid.transformer is not None:
        g = grid.transformer
        lr_axis = len(g.learning_rates) > 1
        for step, lr, seed in itertools.product(g.step_sizes, g.learning_rates, g.seeds):
            rid = f"transformer-step{step}" + (f"-{_lr_tag(lr)}" if lr_axis else "") + f"-s{seed}"
            specs.append(TrainRunSpec(
                rid, "transformer", dict(encoder_id=g.encoder_id, max_tokens=g.max_tokens), None,
                seed, lr, LrSchedule("stepwise", step, g.gamma), g.max_epochs, g.batch_size, **common))
    seen: set[str] = set()
    for s in specs:
        if s.run_id in seen:
            raise InputError(f"duplicate run_id in grid: {s.run_id}")
        seen.add(s.run_id)
    return specs


# -- data and model construction ---------------------------------------------

@dataclass
class PreparedRun:
    model: torch.nn.Module
    vocab: Vocabulary | None
    coverage: float | None = None


def build_model(spec: TrainRunSpec, train_split: DataSplit,
                embeddings: EmbeddingsConfig | None = None) -> PreparedRun:
    """Construct the (seeded) model for a spec; vocabulary comes from the training split only."""
    set_seed(spec.seed)
    cfg = spec.model_config()
    vocab = build_vocab((r.text for r in train_split.records), spec.min_freq)
    if spec.family == "transformer":
        return PreparedRun(build_transformer(cfg, vocab), vocab)
    embeddings = embeddings or EmbeddingsConfig()
    source = embeddings.sources.get(spec.embedding) if spec.embedding else None
    coverage = None
    if source is not None and source.path is not None:
        table = load_pretrained(source.path, source.format, vocab, seed=spec.seed)
        matrix, coverage = table.matrix, table.coverage
    else:
        if spec.embedding is not None:
            log.warning("%s: no file for embedding %r, using a random table", spec.run_id, spec.embedding)
        matrix = random_table(vocab, embeddings.random_dim, spec.seed)
    model_cls = TextCNN if spec.family == "cnn" else BiLSTMClassifier
    return PreparedRun(model_cls(matrix.astype(np.float32), cfg), vocab, coverage)


class _Inputs:
    """Model inputs for one split, batched by index."""

    def __init__(self, family: str, model, records, vocab: Vocabulary | None, max_len: int):
        self.family = family
        self.texts = [r.text for r in records]
        if family != "transformer":
            ids, lengths = encode_texts(self.texts, vocab, max_len)
            self.ids = torch.as_tensor(ids)
            self.lengths = torch.as_tensor(lengths)
        self.model = model

    def __len__(self):
        return len(self.texts)

    def logits(self, index) -> torch.Tensor:
        if self.family == "transformer":
            input_ids, mask = self.model.encode([self.texts[i] for i in index])
            return self.model(input_ids, mask)
        index = torch.as_tensor(index)
        return self.model(self.ids[index], self.lengths[index])


def predict_proba(model, family: str, records, vocab: Vocabulary | None, max_len: int,
                  batch_size: int = EVAL_BATCH_SIZE) -> np.ndarray:
    """Positive-class probabilities in record order (eval mode, no grad)."""
    inputs = _Inputs(family, model, records, vocab, max_len)
    model.eval()
    out = []
    with torch.no_grad():
        for start in range(0, len(inputs), batch_size):
            idx = list(range(start, min(start + batch_size, len(inputs))))
            out.append(torch.softmax(inputs.logits(idx), dim=1)[:, 1].double())
    return torch.cat(out).numpy() if out else np.zeros(0)


def _dev_metrics(probs: np.ndarray, split: DataSplit) -> MetricsReport:
    gold = [r.binary_label for r in split.records]
    return metrics_from_counts(*confusion(probs >= SELECTION_THRESHOLD, gold))


def train(spec: TrainRunSpec, train_split: DataSplit, dev_split: DataSplit, run_dir: str | Path,
          embeddings: EmbeddingsConfig | None = None,
          on_epoch: Callable[[EpochMetrics], None] | None = None) -> TrainedModelRecord:
    """Train for exactly ``max_epochs`` epochs, keeping the checkpoint with the best dev F1 at 0.5."""
    spec.validate()
    if len(dev_split) == 0:
        raise InputError(f"{spec.run_id}: dev split is empty")
    if len(train_split) == 0:
        raise InputError(f"{spec.run_id}: train split is empty")
    if not (train_split.labelled and dev_split.labelled):
        raise InputError(f"{spec.run_id}: train and dev splits must be labelled")

    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "spec.json").write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n")

    prepared = build_model(spec, train_split, embeddings)
    model, vocab = prepared.model, prepared.vocab
    train_inputs = _Inputs(spec.family, model, train_split.records, vocab, spec.max_len)
    targets = torch.tensor([r.binary_label for r in train_split.records], dtype=torch.long)
    params = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.Adam(params, lr=spec.base_lr)
    shuffler = torch.Generator().manual_seed(spec.seed)
    checkpoint = run_dir / "checkpoint.pt"

    history: list[EpochMetrics] = []
    best: tuple[int, float, np.ndarray] | None = None
    for epoch in range(1, spec.max_epochs + 1):
        lr = spec.lr_schedule.lr(epoch, spec.base_lr)
        for group in optimizer.param_groups:
            group["lr"] = lr
        model.train()
        perm = torch.randperm(len(train_split), generator=shuffler).tolist()
        total, seen = 0.0, 0
        for b, start in enumerate(range(0, len(perm), spec.batch_size)):
            idx = perm[start:start + spec.batch_size]
            loss = F.cross_entropy(train_inputs.logits(idx), targets[idx])
            if not torch.isfinite(loss):
                raise TrainingError(f"{spec.run_id}: non-finite loss at epoch {epoch}, batch {b}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += loss.item() * len(idx)
            seen += len(idx)

        probs = predict_proba(model, spec.family, dev_split.records, vocab, spec.max_len)
        m = _dev_metrics(probs, dev_split)
        em = EpochMetrics(epoch, total / seen, m.precision, m.recall, m.f1)
        history.append(em)
        log.info("%s epoch %d loss %.4f dev P %.4f R %.4f F1 %.4f", spec.run_id, epoch,
                 em.train_loss, m.precision, m.recall, m.f1)
        if on_epoch:
            on_epoch(em)
        if best is None or m.f1 > best[1]:
            best = (epoch, m.f1, probs)
            save_checkpoint(checkpoint, model, family=spec.family, model_config=spec.model_config(),
                            epoch=epoch, dev_f1=m.f1, vocab=vocab,
                            extra={"run_id": spec.run_id, "max_len": spec.max_len})

    with (run_dir / "metrics.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "dev_precision", "dev_recall", "dev_f1"])
        for e in history:
            w.writerow([e.epoch, repr(e.train_loss), repr(e.precision), repr(e.recall), repr(e.f1)])

    best_epoch, best_f1, best_probs = best
    dev_pred = PredictionSet(spec.run_id, "dev", dev_split.par_ids, best_probs)
    dev_path = run_dir / "dev_predictions.tsv"
    dev_pred.write_tsv(dev_path)
    return TrainedModelRecord(
        run_id=spec.run_id, spec=spec, per_epoch=history, best_epoch=best_epoch,
        best_dev_f1=best_f1, checkpoint=str(checkpoint), dev_predictions_path=str(dev_path),
        n_parameters=count_parameters(model), dev_predictions=dev_pred,
    )


def predict_split(checkpoint: str | Path, split: DataSplit, source_id: str | None = None) -> PredictionSet:
    """Reload a checkpoint and score every record of a split."""
    model, meta = load_checkpoint(checkpoint)
    max_len = meta["extra"].get("max_len", DEFAULT_MAX_LEN)
    probs = predict_proba(model, meta["family"], split.records, meta["vocab"], max_len)
    return PredictionSet(source_id or meta["extra"].get("run_id", "model"), split.name, split.par_ids, probs)


# -- registry ---------------------------------------------------------------

class RunRegistry:
    """Append-only JSON-lines registry of finished runs, guarded by a file lock."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.lock = FileLock(str(self.path) + ".lock")

    def append(self, record: TrainedModelRecord) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self.lock:
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(record.to_json() + "\n")

    def records(self) -> list[TrainedModelRecord]:
        if not self.path.exists():
            return []
        with self.lock:
            lines = self.path.read_text(encoding="utf-8").splitlines()
        latest: dict[str, TrainedModelRecord] = {}
        for line in lines:
            if line.strip():
                rec = TrainedModelRecord.from_json(line)
                latest[rec.run_id] = rec
        return list(latest.values())

    def completed(self) -> set[str]:
        return {r.run_id for r in self.records()}

