"""Corpus ingestion and preprocessing.

A document is an ordered tuple of sentences with a stable id. Preprocessing
enforces a minimum sentence count, truncates at sentence granularity to a
whole-document token budget, and partitions very long documents into blocks
so every positive fed to training is well formed.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator

logger = logging.getLogger(__name__)

TokenCounter = Callable[[str], int]


class CorpusFormatError(Exception):
    """A corpus file that cannot be ingested at all."""


def whitespace_token_count(sentence: str) -> int:
    """Fallback token counter: whitespace-delimited tokens."""
    return len(sentence.split())


@dataclass(frozen=True)
class Document:
    """An ordered list of sentences with a stable id and cached token count."""

    id: str
    sentences: tuple[str, ...]
    token_count: int

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("document id must be non-empty")
        if not isinstance(self.sentences, tuple):
            object.__setattr__(self, "sentences", tuple(self.sentences))
        if len(self.sentences) == 0:
            raise ValueError(f"document {self.id!r} has no sentences")
        for i, sentence in enumerate(self.sentences):
            if not isinstance(sentence, str) or not sentence.strip():
                raise ValueError(f"document {self.id!r}: sentence {i} is empty")

    @property
    def n(self) -> int:
        return len(self.sentences)

    @classmethod
    def make(
        cls,
        doc_id: str,
        sentences: tuple[str, ...] | list[str],
        token_counter: TokenCounter = whitespace_token_count,
    ) -> "Document":
        sentences = tuple(sentences)
        return cls(doc_id, sentences, sum(token_counter(s) for s in sentences))

    def to_json(self) -> dict:
        return {"id": self.id, "sentences": list(self.sentences)}

    @classmethod
    def from_json(cls, record: dict) -> "Document":
        if not isinstance(record, dict):
            raise ValueError("record is not an object")
        if "id" not in record or "sentences" not in record:
            raise ValueError("record needs 'id' and 'sentences'")
        if not isinstance(record["sentences"], list):
            raise ValueError("'sentences' must be a list")
        return cls.make(str(record["id"]), [str(s) for s in record["sentences"]])


@dataclass
class Corpus:
    """A collection of documents with unique ids."""

    documents: list[Document]
    split: str = "train"
    skipped: int = 0

    def __post_init__(self) -> None:
        self._by_id = {}
        for doc in self.documents:
            if doc.id in self._by_id:
                raise ValueError(f"duplicate document id {doc.id!r}")
            self._by_id[doc.id] = doc

    def __len__(self) -> int:
        return len(self.documents)

    def __iter__(self) -> Iterator[Document]:
        return iter(self.documents)

    def get(self, doc_id: str) -> Document:
        return self._by_id[doc_id]

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._by_id


def load_corpus(path: str | Path, fmt: str = "auto", split: str = "train") -> Corpus:
    """Load a corpus from JSON-lines ({"id", "sentences"}) or plain text.

    Plain text uses one sentence per line with blank lines separating
    documents. Malformed records are skipped with a warning and tallied in
    ``Corpus.skipped``; an unreadable file raises CorpusFormatError.
    """
    path = Path(path)
    if fmt == "auto":
        fmt = "jsonl" if path.suffix.lower() in (".jsonl", ".ndjson", ".json") else "text"
    if fmt not in ("jsonl", "text"):
        raise ValueError(f"unknown corpus format {fmt!r}")
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise CorpusFormatError(f"cannot read corpus {path}: {exc}") from exc

    documents: list[Document] = []
    seen: set[str] = set()
    skipped = 0
    if fmt == "jsonl":
        for lineno, line in enumerate(raw.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                doc = Document.from_json(json.loads(line))
                if doc.id in seen:
                    raise ValueError(f"duplicate id {doc.id!r}")
            except ValueError as exc:
                logger.warning("%s:%d: skipping malformed record (%s)", path, lineno, exc)
                skipped += 1
                continue
            seen.add(doc.id)
            documents.append(doc)
    else:
        block: list[str] = []
        index = 0

        def flush() -> None:
            nonlocal index, skipped
            if not block:
                return
            try:
                documents.append(Document.make(f"{path.stem}-{index:05d}", block))
            except ValueError as exc:
                logger.warning("%s: skipping malformed block %d (%s)", path, index, exc)
                skipped += 1
            index += 1
            block.clear()

        for line in raw.splitlines():
            if line.strip():
                block.append(line.strip())
            else:
                flush()
        flush()

    return Corpus(documents, split=split, skipped=skipped)


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write a corpus as JSON-lines, deterministically."""
    lines = [json.dumps(doc.to_json(), sort_keys=True, ensure_ascii=False) for doc in corpus]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def preprocess(
    doc: Document,
    min_sentences: int = 4,
    max_tokens: int = 600,
    token_counter: TokenCounter = whitespace_token_count,
) -> Document | None:
    """Apply the sentence-count floor and the sentence-granular token budget.

    Trailing whole sentences are removed until the document fits within
    ``max_tokens``. Returns None when the document starts below
    ``min_sentences`` or truncation would push it below that floor.
    """
    if min_sentences < 1:
        raise ValueError("min_sentences must be >= 1")
    if doc.n < min_sentences:
        return None
    counts = [token_counter(s) for s in doc.sentences]
    total = sum(counts)
    keep = doc.n
    while total > max_tokens and keep > 0:
        keep -= 1
        total -= counts[keep]
    if keep < min_sentences:
        return None
    return Document(doc.id, doc.sentences[:keep], total)


def partition_blocks(
    doc: Document,
    threshold: int = 20,
    block_size: int = 10,
    min_block_sentences: int = 4,
    token_counter: TokenCounter = whitespace_token_count,
) -> list[Document]:
    """Split documents with ``threshold``-plus sentences into consecutive blocks.

    Shorter documents pass through unchanged. A remainder block is kept only
    when it has at least ``min_block_sentences`` sentences; block ids are
    ``{parent_id}#b{index}``.
    """
    if block_size < 1 or threshold < 1:
        raise ValueError("threshold and block_size must be >= 1")
    if doc.n < threshold:
        return [doc]
    blocks = []
    for index, start in enumerate(range(0, doc.n, block_size)):
        sentences = doc.sentences[start : start + block_size]
        if len(sentences) < min_block_sentences:
            break
        blocks.append(Document.make(f"{doc.id}#b{index}", sentences, token_counter))
    return blocks


def prepare_corpus(
    corpus: Corpus,
    min_sentences: int = 4,
    max_tokens: int = 600,
    block_threshold: int = 20,
    block_size: int = 10,
    token_counter: TokenCounter = whitespace_token_count,
) -> Corpus:
    """Preprocess then block-partition every document; drops the excluded ones."""
    documents: list[Document] = []
    dropped = 0
    for doc in corpus:
        trimmed = preprocess(doc, min_sentences, max_tokens, token_counter)
        if trimmed is None:
            dropped += 1
            continue
        documents.extend(
            partition_blocks(trimmed, block_threshold, block_size, min_sentences, token_counter)
        )
    if dropped:
        logger.info("prepare_corpus | dropped=%d kept=%d", dropped, len(documents))
    return Corpus(documents, split=corpus.split, skipped=corpus.skipped)
