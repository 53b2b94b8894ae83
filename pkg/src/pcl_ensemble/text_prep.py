"""Tokenization, vocabulary construction and pretrained embedding tables."""

from __future__ import annotations

import hashlib
import logging
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InputError

log = logging.getLogger(__name__)

PAD, UNK = "<pad>", "<unk>"
PAD_INDEX, UNK_INDEX = 0, 1
OOV_SCALE = 0.25
DEFAULT_MAX_LEN = 256

# aliases of the four supported pretrained tables
EMBEDDING_ALIASES = ("google_news", "glove_word", "glove_twitter", "fasttext")

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


class EmbeddingFormatError(InputError):
    pass


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]

    def __post_init__(self):
        if self.tokens[:2] != (PAD, UNK):
            raise ValueError("vocabulary must start with PAD, UNK")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("vocabulary tokens must be unique")
        object.__setattr__(self, "token_to_index", {t: i for i, t in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_index

    def index(self, token: str) -> int:
        return self.token_to_index.get(token, UNK_INDEX)

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.tokens).encode("utf-8")).hexdigest()

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        return cls(tuple(Path(path).read_text(encoding="utf-8").split("\n")[:-1]))


def build_vocab(texts: Iterable[str], min_freq: int = 1) -> Vocabulary:
    """Vocabulary over training texts, most frequent first, ties broken lexicographically."""
    counts = Counter(tok for text in texts for tok in tokenize(text))
    kept = sorted((t for t, c in counts.items() if c >= min_freq and t not in (PAD, UNK)),
                  key=lambda t: (-counts[t], t))
    return Vocabulary((PAD, UNK, *kept))


def encode(tokens: Sequence[str], vocab: Vocabulary, max_len: int = DEFAULT_MAX_LEN) -> list[int]:
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    ids = [vocab.index(t) for t in tokens[:max_len]]
    return ids + [PAD_INDEX] * (max_len - len(ids))


def encode_texts(texts: Sequence[str], vocab: Vocabulary, max_len: int = DEFAULT_MAX_LEN):
    """Encode a batch; returns (index matrix N x max_len, true lengths)."""
    rows, lengths = [], []
    for text in texts:
        toks = tokenize(text)
        rows.append(encode(toks, vocab, max_len))
        lengths.append(min(len(toks), max_len))
    return np.asarray(rows, dtype=np.int64).reshape(len(rows), max_len), np.asarray(lengths, dtype=np.int64)


@dataclass(frozen=True)
class EmbeddingTable:
    matrix: np.ndarray
    coverage: float

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __post_init__(self):
        if not np.all(np.isfinite(self.matrix)):
            raise EmbeddingFormatError("embedding table contains non-finite values")
        if np.any(self.matrix[PAD_INDEX] != 0):
            raise EmbeddingFormatError("PAD row must be zero")


def random_table(vocab: Vocabulary, dim: int, seed: int) -> np.ndarray:
    """Uniform(-0.25, 0.25) rows with a zero PAD row."""
    rng = np.random.default_rng(seed)
    matrix = rng.uniform(-OOV_SCALE, OOV_SCALE, size=(len(vocab), dim))
    matrix[PAD_INDEX] = 0.0
    return matrix


def _parse_header(fields: list[str]) -> tuple[int, int] | None:
    if len(fields) == 2 and all(f.isdigit() for f in fields):
        return int(fields[0]), int(fields[1])
    return None


def _iter_text_vectors(path: Path):
    with path.open(encoding="utf-8", errors="strict") as fh:
        dim = None
        for lineno, line in enumerate(fh, start=1):
            fields = line.rstrip("\n").rstrip(" ").split(" ")
            if lineno == 1:
                header = _parse_header(fields)
                if header is not None:
                    dim = header[1]
                    continue
            if not fields or fields == [""]:
                continue
            if dim is None:
                dim = len(fields) - 1
                if dim < 1:
                    raise EmbeddingFormatError(f"{path}:{lineno}: no vector components")
            if len(fields) - 1 != dim:
                raise EmbeddingFormatError(
                    f"{path}:{lineno}: expected {dim} components, got {len(fields) - 1}")
            try:
                vec = np.asarray(fields[1:], dtype=np.float64)
            except ValueError:
                raise EmbeddingFormatError(f"{path}:{lineno}: non-numeric component") from None
            yield dim, fields[0], vec


def _iter_word2vec_binary(path: Path):
    with path.open("rb") as fh:
        header = _parse_header(fh.readline().decode("ascii", errors="replace").split())
        if header is None:
            raise EmbeddingFormatError(f"{path}: unreadable word2vec header")
        count, dim = header
        nbytes = 4 * dim
        for k in range(count):
            chars = bytearray()
            while True:
                ch = fh.read(1)
                if not ch:
                    raise EmbeddingFormatError(f"{path}: truncated at entry {k}")
                if ch == b" ":
                    break
                if ch != b"\n" or chars:
                    chars.extend(ch)
            raw = fh.read(nbytes)
            if len(raw) != nbytes:
                raise EmbeddingFormatError(f"{path}: truncated vector at entry {k}")
            word = chars.decode("utf-8", errors="replace")
            yield dim, word, np.frombuffer(raw, dtype="<f4").astype(np.float64)


def load_pretrained(path: str | Path, fmt: str, vocab: Vocabulary, seed: int = 0) -> EmbeddingTable:
    """Build a vocab-aligned table from a pretrained vector file.

    Exact-case matches win over lowercased matches of cased entries.
    Tokens not in the file keep their uniform random initialization.
    """
    path = Path(path)
    if not path.is_file():
        raise InputError(f"embedding file not found: {path}")
    if fmt == "text-vec":
        entries = _iter_text_vectors(path)
    elif fmt == "word2vec-binary":
        entries = _iter_word2vec_binary(path)
    else:
        raise InputError(f"unknown embedding format {fmt!r}")

    found: dict[int, np.ndarray] = {}
    exact: set[int] = set()
    dim = None
    for dim, word, vec in entries:
        if word in vocab.token_to_index:
            idx = vocab.token_to_index[word]
            found[idx] = vec
            exact.add(idx)
            continue
        idx = vocab.token_to_index.get(word.lower())
        if idx is not None and idx not in found:
            found[idx] = vec
    if dim is None:
        raise EmbeddingFormatError(f"{path}: no vectors")

    matrix = random_table(vocab, dim, seed)
    for idx, vec in found.items():
        if idx != PAD_INDEX:
            matrix[idx] = vec
    n_words = len(vocab) - 2
    hits = sum(1 for idx in found if idx >= 2)
    coverage = hits / n_words if n_words else 0.0
    log.info("%s: %d/%d vocabulary tokens covered", path.name, hits, n_words)
    return EmbeddingTable(matrix, coverage)


def write_text_vectors(vectors: dict[str, Sequence[float]], path: str | Path, header: bool = True) -> None:
    path = Path(path)
    dim = len(next(iter(vectors.values()))) if vectors else 0
    with path.open("w", encoding="utf-8") as fh:
        if header:
            fh.write(f"{len(vectors)} {dim}\n")
        for word, vec in vectors.items():
            fh.write(word + " " + " ".join(repr(float(x)) for x in vec) + "\n")


def write_word2vec_binary(vectors: dict[str, Sequence[float]], path: str | Path) -> None:
    path = Path(path)
    dim = len(next(iter(vectors.values()))) if vectors else 0
    with path.open("wb") as fh:
        fh.write(f"{len(vectors)} {dim}\n".encode("ascii"))
        for word, vec in vectors.items():
            fh.write(word.encode("utf-8") + b" ")
            fh.write(np.asarray(vec, dtype="<f4").tobytes())
            fh.write(b"\n")
