"""Unweighted probability averaging, threshold tuning and top-N ensembles."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np

from .errors import AlignmentError, InputError, SelectionError
from .evaluation import MetricsReport, confusion, metrics_from_counts

# 0.05, 0.10, ..., 0.95
DEFAULT_THRESHOLD_GRID = tuple(round(0.05 * k, 2) for k in range(1, 20))


@dataclass(frozen=True)
class PredictionSet:
    source_id: str
    split: str
    par_ids: tuple[str, ...]
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "par_ids", tuple(self.par_ids))
        object.__setattr__(self, "probs", probs)
        if probs.shape != (len(self.par_ids),):
            raise InputError(f"{self.source_id}: {len(self.par_ids)} ids but probs shape {probs.shape}")
        if len(set(self.par_ids)) != len(self.par_ids):
            raise InputError(f"{self.source_id}: duplicate par_ids")
        if probs.size and (not np.all(np.isfinite(probs)) or probs.min() < 0 or probs.max() > 1):
            raise InputError(f"{self.source_id}: probabilities outside [0, 1]")

    def __len__(self) -> int:
        return len(self.par_ids)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.par_ids, self.probs.tolist()))

    def aligned(self, order: Sequence[str]) -> np.ndarray:
        index = {pid: k for k, pid in enumerate(self.par_ids)}
        return self.probs[[index[pid] for pid in order]]

    def write_tsv(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="") as fh:
            fh.write("par_id\tp_positive\n")
            for pid, p in zip(self.par_ids, self.probs):
                fh.write(f"{pid}\t{float(p)!r}\n")

    @classmethod
    def read_tsv(cls, path: str | Path, source_id: str, split: str) -> "PredictionSet":
        path = Path(path)
        if not path.is_file():
            raise InputError(f"prediction file not found: {path}")
        with path.open(encoding="utf-8") as fh:
            header = fh.readline().rstrip("\n")
            if header != "par_id\tp_positive":
                raise InputError(f"{path}: unexpected header {header!r}")
            rows = [line.rstrip("\n").split("\t") for line in fh if line.strip()]
        return cls(source_id, split, tuple(r[0] for r in rows), np.array([float(r[1]) for r in rows]))


@dataclass
class EnsembleSpec:
    ensemble_id: str
    members: list[str]
    threshold: float | None = None

    def __post_init__(self):
        if not self.members:
            raise InputError("an ensemble needs at least one member")
        if len(set(self.members)) != len(self.members):
            raise InputError(f"duplicate ensemble members: {self.members}")

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(
            {"ensemble_id": self.ensemble_id, "members": self.members, "threshold": self.threshold},
            indent=2) + "\n")

    @classmethod
    def read_json(cls, path: str | Path) -> "EnsembleSpec":
        d = json.loads(Path(path).read_text())
        return cls(d["ensemble_id"], list(d["members"]), d.get("threshold"))


def average(sets: Sequence[PredictionSet], source_id: str = "ensemble") -> PredictionSet:
    """Per-par_id arithmetic mean of member probabilities, in the first member's order."""
    if not sets:
        raise InputError("cannot average zero prediction sets")
    first = sets[0]
    ids = set(first.par_ids)
    for other in sets[1:]:
        if other.split != first.split:
            raise AlignmentError(f"mixed splits {first.split!r} and {other.split!r}")
        if set(other.par_ids) != ids:
            raise AlignmentError(f"{other.source_id} covers different par_ids than {first.source_id}",
                                 ids - set(other.par_ids), set(other.par_ids) - ids)
    stacked = np.stack([s.aligned(first.par_ids) for s in sets])
    # sorting along the member axis makes the sum independent of member order
    stacked.sort(axis=0)
    mean = stacked.sum(axis=0) / len(sets)
    mean = np.clip(mean, stacked[0], stacked[-1])
    return PredictionSet(source_id, first.split, first.par_ids, mean)


def apply_threshold(pset: PredictionSet, threshold: float) -> dict[str, int]:
    """1 iff p_positive >= threshold."""
    return dict(zip(pset.par_ids, (pset.probs >= threshold).astype(int).tolist()))


def _gold(pset: PredictionSet, labels: Mapping[str, int]) -> np.ndarray:
    if set(labels) != set(pset.par_ids):
        raise AlignmentError("labels and predictions cover different par_ids",
                             set(pset.par_ids) - set(labels), set(labels) - set(pset.par_ids))
    return np.array([labels[pid] for pid in pset.par_ids], dtype=int)


def evaluate_at(pset: PredictionSet, labels: Mapping[str, int], threshold: float) -> MetricsReport:
    return metrics_from_counts(*confusion(pset.probs >= threshold, _gold(pset, labels)))


def optimize_threshold(pset: PredictionSet, labels: Mapping[str, int],
                       grid: Sequence[float] = DEFAULT_THRESHOLD_GRID) -> tuple[float, float]:
    """Grid threshold with the best PCL-class F1; ties go to the smallest threshold."""
    if not len(grid):
        raise InputError("threshold grid is empty")
    gold = _gold(pset, labels)
    if not gold.any():
        raise InputError("dev labels contain no positives: F1 is undefined for every threshold; "
                         "use a split with PCL examples")
    best_t, best_f1 = None, -1.0
    for t in sorted(grid):
        f1 = metrics_from_counts(*confusion(pset.probs >= t, gold)).f1
        if f1 > best_f1:
            best_t, best_f1 = t, f1
    return float(best_t), best_f1


class Candidate(Protocol):
    run_id: str
    family: str
    best_dev_f1: float


def rank(registry: Iterable[Candidate], family_filter: str | None = None) -> list[Candidate]:
    pool = [r for r in registry if family_filter is None or r.family == family_filter]
    return sorted(pool, key=lambda r: (-r.best_dev_f1, r.run_id))


def select_top_n(registry: Iterable[Candidate], n: int, family_filter: str | None = None,
                 ensemble_id: str | None = None) -> EnsembleSpec:
    if n < 1:
        raise InputError("n must be >= 1")
    ranked = rank(registry, family_filter)
    if len(ranked) < n:
        scope = f" of family {family_filter!r}" if family_filter else ""
        raise SelectionError(f"requested top {n} models{scope} but the registry holds {len(ranked)}")
    return EnsembleSpec(ensemble_id or f"top{n}", [r.run_id for r in ranked[:n]])


def compose(registry: Sequence[Candidate], top: int, add: Mapping[str, int] | None = None,
            family_filter: str | None = None, ensemble_id: str = "ensemble") -> EnsembleSpec:
    """Top-``top`` models, then the best ``add[family]`` models of each listed family
    not already included (the second ensemble's "top few CNN and BiLSTM")."""
    members = list(select_top_n(registry, top, family_filter).members)
    for family, k in (add or {}).items():
        extra = [r.run_id for r in rank(registry, family) if r.run_id not in members]
        if len(extra) < k:
            raise SelectionError(f"need {k} more {family} models, registry has {len(extra)}")
        members.extend(extra[:k])
    return EnsembleSpec(ensemble_id, members)


def build(spec: EnsembleSpec, predictions: Mapping[str, PredictionSet]) -> PredictionSet:
    missing = [m for m in spec.members if m not in predictions]
    if missing:
        raise SelectionError(f"no predictions for members: {', '.join(missing)}")
    return average([predictions[m] for m in spec.members], source_id=spec.ensemble_id)


@dataclass
class SweepPoint:
    n: int
    threshold: float
    precision: float
    recall: float
    f1: float
    members: list[str] = field(default_factory=list)


def ensemble_sweep(registry: Sequence[Candidate], predictions: Mapping[str, PredictionSet], n_max: int,
                   labels: Mapping[str, int], grid: Sequence[float] = DEFAULT_THRESHOLD_GRID,
                   frozen_threshold: float | None = None) -> list[SweepPoint]:
    """Metrics of the top-n average for n = 1..n_max; threshold re-tuned per n
    unless ``frozen_threshold`` is given."""
    ranked = select_top_n(registry, n_max).members
    points = []
    for n in range(1, n_max + 1):
        members = ranked[:n]
        avg = average([predictions[m] for m in members], source_id=f"top{n}")
        t = frozen_threshold if frozen_threshold is not None else optimize_threshold(avg, labels, grid)[0]
        m = evaluate_at(avg, labels, t)
        points.append(SweepPoint(n, t, m.precision, m.recall, m.f1, list(members)))
    return points


def write_sweep_csv(points: Sequence[SweepPoint], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        fh.write("n,precision,recall,f1\n")
        for p in points:
            fh.write(f"{p.n},{p.precision!r},{p.recall!r},{p.f1!r}\n")
