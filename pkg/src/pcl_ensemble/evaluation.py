"""Positive-class metrics, per-keyword error slices and misclassification listings."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import ParagraphRecord
from .errors import AlignmentError, InputError


@dataclass(frozen=True)
class MetricsReport:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int
    # names of metrics whose denominator was zero (reported as 0.0)
    undefined: tuple[str, ...] = ()

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def to_dict(self) -> dict:
        d = asdict(self)
        d["undefined"] = list(self.undefined)
        return d

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def _check_aligned(left: Mapping, right: Mapping, what: str) -> None:
    if left.keys() != right.keys():
        raise AlignmentError(what, left.keys() - right.keys(), right.keys() - left.keys())


def metrics_from_counts(tp: int, fp: int, fn: int, tn: int) -> MetricsReport:
    undefined = []
    if tp + fp:
        precision = tp / (tp + fp)
    else:
        precision = 0.0
        undefined.append("precision")
    if tp + fn:
        recall = tp / (tp + fn)
    else:
        recall = 0.0
        undefined.append("recall")
    if tp:
        # equals 2PR/(P+R); the count form avoids rounding differences between equal ratios
        f1 = 2 * tp / (2 * tp + fp + fn)
    else:
        f1 = 0.0
        if precision + recall == 0:
            undefined.append("f1")
    return MetricsReport(precision, recall, f1, tp, fp, fn, tn, tuple(undefined))


def confusion(pred: np.ndarray, gold: np.ndarray) -> tuple[int, int, int, int]:
    pred = np.asarray(pred).astype(bool)
    gold = np.asarray(gold).astype(bool)
    tp = int(np.sum(pred & gold))
    fp = int(np.sum(pred & ~gold))
    fn = int(np.sum(~pred & gold))
    tn = int(np.sum(~pred & ~gold))
    return tp, fp, fn, tn


def prf1(predictions: Mapping[str, int], labels: Mapping[str, int]) -> MetricsReport:
    """Precision/recall/F1 for the PCL class over par_id-keyed predictions."""
    _check_aligned(predictions, labels, "predictions and labels cover different par_ids")
    ids = list(labels)
    return metrics_from_counts(*confusion([predictions[i] for i in ids], [labels[i] for i in ids]))


def macro_average(reports: Sequence[MetricsReport]) -> dict[str, float]:
    """Unweighted mean of per-run precision, recall and F1."""
    if not reports:
        raise InputError("macro_average needs at least one report")
    return {
        "precision": float(np.mean([r.precision for r in reports])),
        "recall": float(np.mean([r.recall for r in reports])),
        "f1": float(np.mean([r.f1 for r in reports])),
        "runs": len(reports),
    }


@dataclass
class KeywordErrors:
    fp: int = 0
    fn: int = 0
    total_pcl: int = 0
    total: int = 0


@dataclass
class ErrorBreakdown:
    rows: dict[str, KeywordErrors] = field(default_factory=dict)
    fp: int = 0
    fn: int = 0

    def write_csv(self, path: str | Path) -> None:
        """Keyword rows in alphabetical order, then a TOTAL row."""
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["keyword", "fp", "fn", "total_pcl", "total"])
            for kw in sorted(self.rows):
                r = self.rows[kw]
                w.writerow([kw, r.fp, r.fn, r.total_pcl, r.total])
            w.writerow(["TOTAL", self.fp, self.fn,
                        sum(r.total_pcl for r in self.rows.values()),
                        sum(r.total for r in self.rows.values())])


def _records_for(predictions: Mapping[str, int], records: Sequence[ParagraphRecord]):
    index = {r.par_id: r for r in records}
    unknown = predictions.keys() - index.keys()
    if unknown:
        raise AlignmentError("predictions reference par_ids without records", unknown, ())
    return index


def error_by_keyword(predictions: Mapping[str, int], labels: Mapping[str, int],
                     records: Sequence[ParagraphRecord]) -> ErrorBreakdown:
    _check_aligned(predictions, labels, "predictions and labels cover different par_ids")
    index = _records_for(predictions, records)
    out = ErrorBreakdown()
    for pid, pred in predictions.items():
        gold = labels[pid]
        row = out.rows.setdefault(index[pid].keyword, KeywordErrors())
        row.total += 1
        row.total_pcl += int(gold == 1)
        if pred == 1 and gold == 0:
            row.fp += 1
            out.fp += 1
        elif pred == 0 and gold == 1:
            row.fn += 1
            out.fn += 1
    return out


def misclassified(probabilities: Mapping[str, float], threshold: float, labels: Mapping[str, int],
                  records: Sequence[ParagraphRecord], kind: str) -> list[tuple[ParagraphRecord, float]]:
    """FP or FN records, most confidently wrong first."""
    if kind not in ("fp", "fn"):
        raise ValueError("kind must be 'fp' or 'fn'")
    _check_aligned(probabilities, labels, "probabilities and labels cover different par_ids")
    index = _records_for(probabilities, records)
    want_pred, want_gold = (1, 0) if kind == "fp" else (0, 1)
    hits = [
        (index[pid], p) for pid, p in probabilities.items()
        if int(p >= threshold) == want_pred and labels[pid] == want_gold
    ]
    hits.sort(key=lambda item: (-abs(item[1] - threshold), item[0].par_id))
    return hits


def export_errors(probabilities: Mapping[str, float], threshold: float, labels: Mapping[str, int],
                  records: Sequence[ParagraphRecord], kind: str, path: str | Path) -> int:
    """Write a TSV listing of misclassified paragraphs; returns the row count."""
    rows = misclassified(probabilities, threshold, labels, records, kind)
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        fh.write("par_id\tkeyword\tp_positive\tlabel\ttext\n")
        for rec, p in rows:
            fh.write(f"{rec.par_id}\t{rec.keyword}\t{p:.10g}\t{labels[rec.par_id]}\t{rec.text}\n")
    return len(rows)
