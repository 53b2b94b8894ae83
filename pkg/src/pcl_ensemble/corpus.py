"""Paragraph corpus: TSV ingestion, label binarization and train/dev/test splits."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import InputError

log = logging.getLogger(__name__)

DEFAULT_CUTOFF = 2
SPLIT_NAMES = ("train", "dev", "test")


class ParseError(InputError):
    pass


class LabelValidationError(InputError):
    pass


@dataclass(frozen=True)
class ParagraphRecord:
    par_id: str
    art_id: str
    keyword: str
    country_code: str
    text: str
    raw_label: int | None = None
    binary_label: int | None = None

    @property
    def labelled(self) -> bool:
        return self.binary_label is not None


@dataclass(frozen=True)
class ColumnSchema:
    """Column positions of the logical fields.

    ``label=None`` reads an unlabelled file (e.g. a blind test set).
    ``header`` is True, False or "auto"; auto treats the first data line as a
    header when its label cell is not an integer.
    """

    par_id: int = 0
    art_id: int = 1
    keyword: int = 2
    country_code: int = 3
    text: int = 4
    label: int | None = 5
    header: bool | str = "auto"
    skip_lines: int = 0

    @property
    def n_columns(self) -> int:
        cols = [self.par_id, self.art_id, self.keyword, self.country_code, self.text]
        if self.label is not None:
            cols.append(self.label)
        return max(cols) + 1


@dataclass
class DataSplit:
    name: str
    records: list[ParagraphRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def par_ids(self) -> list[str]:
        return [r.par_id for r in self.records]

    @property
    def labelled(self) -> bool:
        return bool(self.records) and all(r.labelled for r in self.records)

    def labels(self) -> dict[str, int]:
        missing = [r.par_id for r in self.records if not r.labelled]
        if missing:
            raise LabelValidationError(f"split {self.name!r} has {len(missing)} unlabelled records")
        return {r.par_id: int(r.binary_label) for r in self.records}

    def by_id(self) -> dict[str, ParagraphRecord]:
        return {r.par_id: r for r in self.records}


def par_id_key(par_id: str):
    # numeric ids order numerically; anything else after them, lexicographically
    return (0, int(par_id), "") if par_id.isdigit() else (1, 0, par_id)


def binarize_label(raw: int, cutoff: int = DEFAULT_CUTOFF) -> int:
    if raw not in (0, 1, 2, 3, 4):
        raise LabelValidationError(f"raw label {raw!r} outside 0..4")
    if cutoff not in (1, 2, 3, 4):
        raise LabelValidationError(f"cutoff {cutoff!r} outside 1..4")
    return int(raw >= cutoff)


def _looks_like_header(cells: Sequence[str], schema: ColumnSchema) -> bool:
    if schema.header is True:
        return True
    if schema.header is False or schema.label is None:
        return False
    if len(cells) <= schema.label:
        return False
    return not cells[schema.label].strip().lstrip("-").isdigit()


def read_task_tsv(
    path: str | Path, schema: ColumnSchema = ColumnSchema(), cutoff: int = DEFAULT_CUTOFF
) -> tuple[list[ParagraphRecord], int]:
    """Parse a task TSV. Returns (records sorted by par_id, number of rows dropped for empty text)."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"dataset file not found: {path}")
    records: list[ParagraphRecord] = []
    dropped = 0
    with path.open(encoding="utf-8", newline="") as fh:
        lines = fh.read().split("\n")
    first_data = True
    for lineno, line in enumerate(lines, start=1):
        if lineno <= schema.skip_lines:
            continue
        line = line.rstrip("\r")
        if not line.strip():
            continue
        cells = line.split("\t")
        if first_data:
            first_data = False
            if _looks_like_header(cells, schema):
                continue
        if len(cells) != schema.n_columns:
            raise ParseError(
                f"{path}:{lineno}: expected {schema.n_columns} tab-separated columns, got {len(cells)}"
            )
        text = cells[schema.text].strip()
        if not text:
            dropped += 1
            continue
        raw = binary = None
        cell = cells[schema.label].strip() if schema.label is not None else ""
        # an empty label cell marks an unlabelled row (e.g. a blind test split)
        if cell:
            try:
                raw = int(cell)
                binary = binarize_label(raw, cutoff)
            except (ValueError, LabelValidationError):
                raise LabelValidationError(f"{path}:{lineno}: invalid label {cell!r}") from None
        records.append(
            ParagraphRecord(
                par_id=cells[schema.par_id].strip(),
                art_id=cells[schema.art_id].strip(),
                keyword=cells[schema.keyword].strip(),
                country_code=cells[schema.country_code].strip(),
                text=text,
                raw_label=raw,
                binary_label=binary,
            )
        )
    seen: set[str] = set()
    for r in records:
        if r.par_id in seen:
            raise ParseError(f"{path}: duplicate par_id {r.par_id!r}")
        seen.add(r.par_id)
    records.sort(key=lambda r: par_id_key(r.par_id))
    return records, dropped


def load_task_tsv(
    path: str | Path, schema: ColumnSchema = ColumnSchema(), cutoff: int = DEFAULT_CUTOFF
) -> list[ParagraphRecord]:
    records, dropped = read_task_tsv(path, schema, cutoff)
    if dropped:
        log.warning("%s: dropped %d rows with empty text", path, dropped)
    return records


_COLUMNS = ("par_id", "art_id", "keyword", "country_code", "text", "label")


def write_task_tsv(records: Iterable[ParagraphRecord], path: str | Path) -> None:
    """Write records in the default column order with a header row."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write("\t".join(_COLUMNS) + "\n")
        for r in records:
            label = "" if r.raw_label is None else str(r.raw_label)
            fh.write("\t".join([r.par_id, r.art_id, r.keyword, r.country_code, r.text, label]) + "\n")


def read_split_tsv(path: str | Path, name: str, cutoff: int = DEFAULT_CUTOFF) -> DataSplit:
    """Reload a split written by :func:`write_task_tsv`, keeping file order."""
    path = Path(path)
    with path.open(encoding="utf-8", newline="") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if tuple(header) != _COLUMNS:
            raise ParseError(f"{path}: unexpected header {header}")
        rows = [line.rstrip("\n").split("\t") for line in fh if line.strip()]
    records = []
    for lineno, cells in enumerate(rows, start=2):
        if len(cells) != len(_COLUMNS):
            raise ParseError(f"{path}:{lineno}: expected {len(_COLUMNS)} columns, got {len(cells)}")
        raw = int(cells[5]) if cells[5] else None
        records.append(
            ParagraphRecord(*cells[:5], raw_label=raw,
                            binary_label=None if raw is None else binarize_label(raw, cutoff))
        )
    return DataSplit(name, records)


def read_id_list(path: str | Path) -> list[str]:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"split file not found: {path}")
    with path.open(encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip()]


@dataclass(frozen=True)
class SplitConfig:
    """Either explicit id lists per split, or stratified random fractions.

    Explicit: ``ids={"train": [...], "dev": [...]}``; split order follows the lists.
    Stratified: ``fractions={"train": .8, "dev": .2}`` plus ``seed``.
    """

    ids: Mapping[str, Sequence[str]] | None = None
    fractions: Mapping[str, float] | None = None
    seed: int = 0

    def __post_init__(self):
        if (self.ids is None) == (self.fractions is None):
            raise InputError("split config needs exactly one of explicit ids or fractions")


def make_splits(records: Sequence[ParagraphRecord], config: SplitConfig) -> dict[str, DataSplit]:
    if config.ids is not None:
        return _explicit_splits(records, config.ids)
    return _stratified_splits(records, config.fractions, config.seed)


def _explicit_splits(records, ids: Mapping[str, Sequence[str]]) -> dict[str, DataSplit]:
    index = {r.par_id: r for r in records}
    missing = sorted({i for lst in ids.values() for i in lst if i not in index}, key=par_id_key)
    if missing:
        raise InputError(f"split ids absent from corpus: {', '.join(missing)}")
    owner: dict[str, str] = {}
    for name, lst in ids.items():
        for i in lst:
            if i in owner:
                raise InputError(f"par_id {i!r} assigned to both {owner[i]!r} and {name!r}")
            owner[i] = name
    return {name: DataSplit(name, [index[i] for i in lst]) for name, lst in ids.items()}


def _allocate(n: int, fractions: Sequence[float]) -> list[int]:
    # largest-remainder rounding so the counts sum to n
    exact = np.asarray(fractions, dtype=float) * n
    counts = np.floor(exact).astype(int)
    order = np.argsort(-(exact - counts), kind="stable")
    for k in order[: n - counts.sum()]:
        counts[k] += 1
    return counts.tolist()


def _stratified_splits(records, fractions: Mapping[str, float], seed: int) -> dict[str, DataSplit]:
    names = list(fractions)
    total = sum(fractions.values())
    if total <= 0 or any(f < 0 for f in fractions.values()):
        raise InputError(f"invalid split fractions {dict(fractions)}")
    shares = [fractions[n] / total for n in names]
    if any(not r.labelled for r in records):
        raise InputError("stratified splitting needs labelled records")
    rng = np.random.default_rng(seed)
    assigned: dict[str, list[ParagraphRecord]] = {n: [] for n in names}
    for cls in (0, 1):
        members = [r for r in records if r.binary_label == cls]
        perm = rng.permutation(len(members))
        start = 0
        for name, count in zip(names, _allocate(len(members), shares)):
            assigned[name].extend(members[k] for k in perm[start:start + count])
            start += count
    return {
        n: DataSplit(n, sorted(rs, key=lambda r: par_id_key(r.par_id))) for n, rs in assigned.items()
    }
