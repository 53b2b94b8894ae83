"""Classifier families: Kim-style CNN, BiLSTM, and a CLS head over a pretrained encoder.

Every model's ``forward`` returns 2-class logits; ``predict_proba`` applies the
softmax. Column 1 is the PCL class.
"""

from __future__ import annotations

import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence

from .errors import InputError, TrainingError
from .text_prep import PAD_INDEX, Vocabulary, tokenize

log = logging.getLogger(__name__)

WEIGHTS_CACHE_ENV = "PCL_WEIGHTS_CACHE"
CHECKPOINT_FORMAT = "pcl-ensemble-checkpoint/1"


@dataclass
class CnnConfig:
    filter_widths: list[int] = field(default_factory=lambda: [2, 3, 4])
    filters_per_width: int = 2
    dropout_rate: float = 0.5

    def validate(self, max_len: int) -> None:
        if not self.filter_widths or any(w < 1 or w > max_len for w in self.filter_widths):
            raise InputError(f"filter widths {self.filter_widths} must lie in 1..{max_len}")
        if not 1 <= self.filters_per_width <= 300:
            raise InputError("filters_per_width must lie in 1..300")
        if not 0.0 <= self.dropout_rate <= 1.0:
            raise InputError("dropout_rate must lie in [0, 1]")


@dataclass
class BilstmConfig:
    hidden_size: int = 256
    dropout_rate: float = 0.0

    def validate(self) -> None:
        if self.hidden_size < 1:
            raise InputError("hidden_size must be >= 1")


@dataclass
class TransformerConfig:
    """``encoder_id`` names pretrained weights; ``mini:<layers>x<width>`` builds
    a randomly initialized miniature RoBERTa with a word-level tokenizer."""

    encoder_id: str = "roberta-base"
    max_tokens: int = 512


class TextCNN(nn.Module):
    def __init__(self, embeddings: np.ndarray, config: CnnConfig = CnnConfig()):
        super().__init__()
        vocab_size, dim = embeddings.shape
        self.config = config
        self.embedding = nn.Embedding(vocab_size, dim, padding_idx=PAD_INDEX)
        with torch.no_grad():
            self.embedding.weight.copy_(torch.as_tensor(embeddings))
        self.convs = nn.ModuleList(
            nn.Conv1d(dim, config.filters_per_width, w) for w in config.filter_widths
        )
        self.dropout = nn.Dropout(config.dropout_rate)
        self.out = nn.Linear(len(config.filter_widths) * config.filters_per_width, 2)

    def forward(self, ids: torch.Tensor, lengths: torch.Tensor | None = None) -> torch.Tensor:
        x = self.embedding(ids).transpose(1, 2)  # B x d x T
        pooled = [F.relu(conv(x)).amax(dim=2) for conv in self.convs]
        return self.out(self.dropout(torch.cat(pooled, dim=1)))

    def predict_proba(self, ids, lengths=None) -> torch.Tensor:
        return torch.softmax(self(ids, lengths), dim=1)


class BiLSTMClassifier(nn.Module):
    """Single-layer BiLSTM; the readout concatenates the last forward state and
    the first backward state. PAD positions are excluded via packing."""

    def __init__(self, embeddings: np.ndarray, config: BilstmConfig = BilstmConfig()):
        super().__init__()
        vocab_size, dim = embeddings.shape
        self.config = config
        self.embedding = nn.Embedding(vocab_size, dim, padding_idx=PAD_INDEX)
        with torch.no_grad():
            self.embedding.weight.copy_(torch.as_tensor(embeddings))
        self.lstm = nn.LSTM(dim, config.hidden_size, batch_first=True, bidirectional=True)
        # one bias vector per gate: freeze the redundant hidden-side biases at zero
        for name in ("bias_hh_l0", "bias_hh_l0_reverse"):
            bias = getattr(self.lstm, name)
            with torch.no_grad():
                bias.zero_()
            bias.requires_grad_(False)
        self.dropout = nn.Dropout(config.dropout_rate)
        self.out = nn.Linear(2 * config.hidden_size, 2)

    def forward(self, ids: torch.Tensor, lengths: torch.Tensor | None = None) -> torch.Tensor:
        if lengths is None:
            lengths = (ids != PAD_INDEX).sum(dim=1)
        # empty paragraphs still get one (PAD) step so the recurrence is defined
        lengths = lengths.clamp(min=1).cpu()
        packed = pack_padded_sequence(self.embedding(ids), lengths, batch_first=True,
                                      enforce_sorted=False)
        _, (h_n, _) = self.lstm(packed)
        features = torch.cat([h_n[0], h_n[1]], dim=1)
        return self.out(self.dropout(features))

    def predict_proba(self, ids, lengths=None) -> torch.Tensor:
        return torch.softmax(self(ids, lengths), dim=1)


class WordTokenizer:
    """Word-level stand-in for a subword tokenizer, used by miniature encoders."""

    def __init__(self, vocab: Vocabulary):
        self.vocab = vocab
        # PAD=0, UNK=1 come from the vocabulary; CLS/SEP are appended after it
        self.cls_id = len(vocab)
        self.sep_id = len(vocab) + 1
        self.vocab_size = len(vocab) + 2

    def __call__(self, texts: Sequence[str], max_tokens: int):
        rows = []
        truncated = 0
        for text in texts:
            ids = [self.vocab.index(t) for t in tokenize(text)]
            if len(ids) > max_tokens - 2:
                truncated += 1
                ids = ids[: max_tokens - 2]
            rows.append([self.cls_id, *ids, self.sep_id])
        width = max(len(r) for r in rows)
        input_ids = torch.full((len(rows), width), PAD_INDEX, dtype=torch.long)
        mask = torch.zeros((len(rows), width), dtype=torch.long)
        for i, r in enumerate(rows):
            input_ids[i, : len(r)] = torch.tensor(r)
            mask[i, : len(r)] = 1
        return input_ids, mask, truncated


class HFTokenizer:
    def __init__(self, tokenizer):
        self.tokenizer = tokenizer

    def __call__(self, texts: Sequence[str], max_tokens: int):
        enc = self.tokenizer(list(texts), padding=True, truncation=True, max_length=max_tokens,
                             return_tensors="pt", return_overflowing_tokens=False)
        full = self.tokenizer(list(texts), truncation=False)["input_ids"]
        truncated = sum(len(ids) > max_tokens for ids in full)
        return enc["input_ids"], enc["attention_mask"], truncated


class TransformerClassifier(nn.Module):
    """Affine head on the final-layer CLS vector of an encoder."""

    def __init__(self, encoder: nn.Module, tokenizer, config: TransformerConfig, hidden_size: int):
        super().__init__()
        self.encoder = encoder
        self.tokenizer = tokenizer
        self.config = config
        self.head = nn.Linear(hidden_size, 2)

    def encode(self, texts: Sequence[str]):
        input_ids, mask, truncated = self.tokenizer(texts, self.config.max_tokens)
        if truncated:
            log.info("truncated %d texts to %d tokens", truncated, self.config.max_tokens)
        return input_ids, mask

    def forward(self, input_ids: torch.Tensor, attention_mask: torch.Tensor) -> torch.Tensor:
        hidden = self.encoder(input_ids=input_ids, attention_mask=attention_mask).last_hidden_state
        return self.head(hidden[:, 0])

    def predict_proba(self, texts: Sequence[str]) -> torch.Tensor:
        input_ids, mask = self.encode(texts)
        return torch.softmax(self(input_ids, mask), dim=1)


def _parse_mini(encoder_id: str) -> tuple[int, int]:
    try:
        layers, width = encoder_id.split(":", 1)[1].split("x")
        return int(layers), int(width)
    except ValueError:
        raise InputError(f"bad miniature encoder id {encoder_id!r}; expected mini:<layers>x<width>") from None


def build_transformer(config: TransformerConfig, vocab: Vocabulary | None = None) -> TransformerClassifier:
    """Instantiate encoder + tokenizer. Pretrained weights come from the local
    cache (``$PCL_WEIGHTS_CACHE``); nothing is fetched unless the backend does so."""
    from transformers import AutoModel, AutoTokenizer, RobertaConfig, RobertaModel

    if config.encoder_id.startswith("mini:"):
        if vocab is None:
            raise InputError("miniature encoder needs a vocabulary")
        layers, width = _parse_mini(config.encoder_id)
        tokenizer = WordTokenizer(vocab)
        enc_config = RobertaConfig(
            vocab_size=tokenizer.vocab_size, hidden_size=width, num_hidden_layers=layers,
            num_attention_heads=max(1, width // 16), intermediate_size=2 * width,
            max_position_embeddings=config.max_tokens + 2, pad_token_id=PAD_INDEX,
            bos_token_id=tokenizer.cls_id, eos_token_id=tokenizer.sep_id,
        )
        encoder = RobertaModel(enc_config, add_pooling_layer=False)
        return TransformerClassifier(encoder, tokenizer, config, width)

    cache = os.environ.get(WEIGHTS_CACHE_ENV)
    try:
        hf_tok = AutoTokenizer.from_pretrained(config.encoder_id, cache_dir=cache)
        encoder = AutoModel.from_pretrained(config.encoder_id, cache_dir=cache, add_pooling_layer=False)
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot load encoder {config.encoder_id!r}: {exc}") from exc
    return TransformerClassifier(encoder, HFTokenizer(hf_tok), config, encoder.config.hidden_size)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def check_finite(tensor: torch.Tensor, what: str) -> torch.Tensor:
    if not torch.isfinite(tensor).all():
        raise TrainingError(f"non-finite values in {what}")
    return tensor


# -- checkpoints -------------------------------------------------------------

def save_checkpoint(path: str | Path, model: nn.Module, *, family: str, model_config, epoch: int,
                    dev_f1: float, vocab: Vocabulary | None = None, extra: dict | None = None) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "family": family,
        "config": asdict(model_config),
        "vocab_tokens": list(vocab.tokens) if vocab is not None else None,
        "vocab_sha256": vocab.digest() if vocab is not None else None,
        "encoder_id": getattr(model_config, "encoder_id", None),
        "state_dict": {k: v.detach().cpu().clone() for k, v in model.state_dict().items()},
        "embedding_shape": list(model.embedding.weight.shape) if hasattr(model, "embedding") else None,
        "epoch": epoch,
        "dev_f1": dev_f1,
        "extra": extra or {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)


def load_checkpoint(path: str | Path):
    """Returns (model in eval mode, checkpoint metadata dict)."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:  # corrupt archive
        raise InputError(f"unreadable checkpoint {path}: {exc}") from exc
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise InputError(f"{path}: not a pcl-ensemble checkpoint")
    vocab = Vocabulary(tuple(payload["vocab_tokens"])) if payload["vocab_tokens"] else None
    if vocab is not None and vocab.digest() != payload["vocab_sha256"]:
        raise InputError(f"{path}: vocabulary hash mismatch")
    family = payload["family"]
    state = payload["state_dict"]
    if family in ("cnn", "bilstm"):
        shape = payload["embedding_shape"]
        placeholder = np.zeros(shape)
        if family == "cnn":
            model = TextCNN(placeholder, CnnConfig(**payload["config"]))
        else:
            model = BiLSTMClassifier(placeholder, BilstmConfig(**payload["config"]))
        model = model.to(state["embedding.weight"].dtype)
    elif family == "transformer":
        model = build_transformer(TransformerConfig(**payload["config"]), vocab)
    else:
        raise InputError(f"{path}: unknown model family {family!r}")
    model.load_state_dict(state)
    model.eval()
    payload["vocab"] = vocab
    return model, payload
