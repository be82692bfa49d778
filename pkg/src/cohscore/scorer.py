"""Document scorer: a pluggable text encoder plus a linear scoring head.

Two encoder providers are bundled. The "tiny" provider is a small
deterministic transformer over a hashed whitespace vocabulary, meant for
desk-scale experiments and tests; it defaults to float64 so finite-difference
gradient checks and long momentum averages stay exact. The "pretrained"
provider wraps a transformers model (xlnet-base-cased by default) and is
optional.
"""

from __future__ import annotations

import json
import logging
import zlib
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable

import torch
from torch import nn

from cohscore.corpus import Document

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1

_DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass(frozen=True)
class EncoderOutput:
    """Pooled document representation plus per-token states."""

    z: torch.Tensor
    token_states: torch.Tensor | None = None


@dataclass(frozen=True)
class TinyEncoderConfig:
    dim: int = 32
    layers: int = 2
    heads: int = 4
    ff_mult: int = 2
    vocab_size: int = 2048
    max_tokens: int = 512
    dropout: float = 0.0
    seed: int = 0
    dtype: str = "float64"

    def __post_init__(self) -> None:
        if self.dim % self.heads != 0:
            raise ValueError("dim must be divisible by heads")
        if self.vocab_size < 8 or self.max_tokens < 8:
            raise ValueError("vocab_size and max_tokens must be >= 8")
        if self.dtype not in _DTYPES:
            raise ValueError(f"dtype must be one of {sorted(_DTYPES)}")


class HashingTokenizer:
    """Whitespace tokenizer over a fixed-size hashed vocabulary.

    Ids 0 and 1 are reserved (padding, sentence separator); word tokens hash
    into [2, vocab_size) via crc32, which is stable across runs and machines.
    """

    PAD = 0
    SEP = 1

    def __init__(self, vocab_size: int):
        if vocab_size < 8:
            raise ValueError("vocab_size must be >= 8")
        self.vocab_size = vocab_size

    def token_id(self, token: str) -> int:
        return 2 + zlib.crc32(token.lower().encode("utf-8")) % (self.vocab_size - 2)

    def encode(self, doc: Document) -> list[int]:
        ids: list[int] = []
        for i, sentence in enumerate(doc.sentences):
            if i > 0:
                ids.append(self.SEP)
            ids.extend(self.token_id(t) for t in sentence.split())
        return ids


class TinyTextEncoder(nn.Module):
    """Small transformer encoder with seeded, reproducible initialization.

    The pooled representation is the mean of the final-layer states over the
    sequence, which includes a learned classification token in position 0.
    """

    kind = "tiny"

    def __init__(self, config: TinyEncoderConfig | None = None, **overrides):
        super().__init__()
        if config is None:
            config = TinyEncoderConfig(**overrides)
        elif overrides:
            raise ValueError("pass either a config or keyword overrides, not both")
        self.config = config
        self.tokenizer = HashingTokenizer(config.vocab_size)
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(config.seed)
            self.token_embedding = nn.Embedding(config.vocab_size, config.dim)
            self.position_embedding = nn.Embedding(config.max_tokens, config.dim)
            self.cls = nn.Parameter(torch.randn(config.dim) * 0.02)
            layer = nn.TransformerEncoderLayer(
                d_model=config.dim,
                nhead=config.heads,
                dim_feedforward=config.ff_mult * config.dim,
                dropout=config.dropout,
                activation="gelu",
                batch_first=True,
            )
            self.stack = nn.TransformerEncoder(layer, num_layers=config.layers)
        self.to(_DTYPES[config.dtype])

    @property
    def dim(self) -> int:
        return self.config.dim

    def config_dict(self) -> dict:
        return asdict(self.config)

    def forward(self, doc: Document) -> EncoderOutput:
        ids = self.tokenizer.encode(doc)
        if not ids:
            raise ValueError(f"document {doc.id!r} tokenizes to nothing")
        budget = self.config.max_tokens - 1  # one slot reserved for the cls token
        if len(ids) > budget:
            logger.warning("document %s: %d tokens truncated to %d", doc.id, len(ids), budget)
            ids = ids[:budget]
        dtype = _DTYPES[self.config.dtype]
        tokens = self.token_embedding(torch.tensor(ids, dtype=torch.long))
        x = torch.cat([self.cls.unsqueeze(0), tokens]).to(dtype)
        x = x + self.position_embedding(torch.arange(len(ids) + 1))
        states = self.stack(x.unsqueeze(0)).squeeze(0)
        return EncoderOutput(z=states.mean(dim=0), token_states=states)


class PretrainedTextEncoder(nn.Module):
    """Wrapper around a transformers encoder; pooled state is the last token's.

    Requires the optional ``transformers`` dependency and locally available
    model weights.
    """

    kind = "pretrained"

    def __init__(self, model_name: str = "xlnet-base-cased", pooling: str = "last"):
        super().__init__()
        if pooling not in ("last", "first", "mean"):
            raise ValueError(f"unknown pooling {pooling!r}")
        try:
            from transformers import AutoModel, AutoTokenizer
        except ImportError as exc:
            raise RuntimeError(
                "the pretrained encoder needs the 'transformers' extra: "
                "pip install cohscore[pretrained]"
            ) from exc
        self.model_name = model_name
        self.pooling = pooling
        self.tokenizer = AutoTokenizer.from_pretrained(model_name)
        self.model = AutoModel.from_pretrained(model_name)

    @property
    def dim(self) -> int:
        return self.model.config.hidden_size

    def config_dict(self) -> dict:
        return {"model_name": self.model_name, "pooling": self.pooling}

    def forward(self, doc: Document) -> EncoderOutput:
        text = " ".join(doc.sentences)
        encoded = self.tokenizer(text, return_tensors="pt", truncation=True)
        states = self.model(**encoded).last_hidden_state.squeeze(0)
        if self.pooling == "last":
            z = states[-1]
        elif self.pooling == "first":
            z = states[0]
        else:
            z = states.mean(dim=0)
        return EncoderOutput(z=z, token_states=states)


BACKBONE_KINDS = ("tiny", "pretrained")


def make_backbone(kind: str = "tiny", config: dict | None = None) -> nn.Module:
    """Build an encoder provider by name."""
    config = dict(config or {})
    if kind == "tiny":
        return TinyTextEncoder(TinyEncoderConfig(**config))
    if kind == "pretrained":
        return PretrainedTextEncoder(**config)
    raise ValueError(f"unknown backbone kind {kind!r}; expected one of {BACKBONE_KINDS}")


class CoherenceScorer(nn.Module):
    """Encoder plus a linear head mapping the pooled representation to a score."""

    def __init__(self, encoder: nn.Module, head_seed: int = 0):
        super().__init__()
        self.encoder = encoder
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(head_seed)
            self.head = nn.Linear(encoder.dim, 1)
        self.head.to(next(encoder.parameters()).dtype)

    @property
    def dim(self) -> int:
        return self.encoder.dim

    def encode(self, doc: Document) -> EncoderOutput:
        return self.encoder(doc)

    def score(self, doc: Document) -> torch.Tensor:
        """Differentiable scalar coherence score."""
        return self.score_from_z(self.encode(doc).z)

    def score_from_z(self, z: torch.Tensor) -> torch.Tensor:
        score = self.head(z).squeeze(-1)
        if not torch.isfinite(score).all():
            raise ValueError("non-finite coherence score")
        return score

    @torch.no_grad()
    def score_document(self, doc: Document) -> float:
        """Inference-mode score as a plain float."""
        was_training = self.training
        self.eval()
        try:
            return float(self.score(doc))
        finally:
            if was_training:
                self.train()

    def score_documents(self, docs: Iterable[Document]) -> list[float]:
        return [self.score_document(d) for d in docs]

    def save(self, directory: str | Path) -> None:
        """Write a versioned checkpoint directory that round-trips bit-exactly."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        meta = {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "backbone": {"kind": self.encoder.kind, "config": self.encoder.config_dict()},
            "dim": self.dim,
        }
        (directory / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
        torch.save(self.state_dict(), directory / "weights.pt")

    @classmethod
    def load(cls, directory: str | Path) -> "CoherenceScorer":
        directory = Path(directory)
        meta = json.loads((directory / "meta.json").read_text())
        if meta.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise ValueError(
                f"checkpoint format {meta.get('format_version')!r} unsupported; "
                f"expected {CHECKPOINT_FORMAT_VERSION}"
            )
        backbone = make_backbone(meta["backbone"]["kind"], meta["backbone"]["config"])
        if backbone.dim != meta["dim"]:
            raise ValueError(f"dimension mismatch: checkpoint {meta['dim']}, backbone {backbone.dim}")
        scorer = cls(backbone)
        state = torch.load(directory / "weights.pt", map_location="cpu", weights_only=True)
        scorer.load_state_dict(state)
        return scorer
