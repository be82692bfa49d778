"""Training-task construction from ordinary documents.

Positives are original documents; negatives are sentence permutations or
single-sentence intrusions. Negatives are stored compactly as permutation
index arrays and materialized on demand. Every sampling decision comes from
a per-(document, repetition) random stream so generation is reproducible
and embarrassingly parallel across positives.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from cohscore.corpus import Corpus, Document

logger = logging.getLogger(__name__)

NEGATIVE_KINDS = ("permutation", "intrusion")

# Full enumeration is used below this bound; larger pools use rejection
# sampling, where collisions are vanishingly rare.
_ENUMERATION_LIMIT = 7

_STOPWORDS = frozenset(
    """a an the and or but of to in on for with at by from as is was were are be
    been it its he she his her him they them their this that these those not no
    so then than too very into over under after before while when where""".split()
)


class PermutationPoolExhausted(Exception):
    """Requested more unique permutations than the document admits."""


def stream_rng(*keys) -> random.Random:
    """Deterministic random stream derived from hashing the key tuple."""
    digest = hashlib.blake2b(repr(keys).encode("utf-8"), digest_size=16).digest()
    return random.Random(int.from_bytes(digest, "big"))


def is_identity(order: Sequence[int]) -> bool:
    return all(i == j for i, j in enumerate(order))


def validate_order(order: Sequence[int], n: int) -> tuple[int, ...]:
    order = tuple(order)
    if sorted(order) != list(range(n)):
        raise ValueError(f"not a permutation of range({n}): {order}")
    return order


def sample_permutations(
    doc: Document,
    count: int,
    already_used: Iterable[tuple[int, ...]] = (),
    rng: random.Random | None = None,
) -> list[tuple[int, ...]]:
    """Sample ``count`` distinct non-identity sentence orders for ``doc``.

    Orders already in ``already_used`` are never repeated. Raises
    PermutationPoolExhausted when the document's pool of n! - 1 distinct
    orders cannot cover the request.
    """
    if count < 0:
        raise ValueError("count must be >= 0")
    rng = rng or random.Random(0)
    used = {validate_order(o, doc.n) for o in already_used}
    pool = math.factorial(doc.n) - 1
    if count + len(used) > pool:
        raise PermutationPoolExhausted(
            f"document {doc.id!r}: requested {count} new orders with {len(used)} used, "
            f"but only {pool} non-identity orders exist for n={doc.n}"
        )
    if count == 0:
        return []
    identity = tuple(range(doc.n))
    if doc.n <= _ENUMERATION_LIMIT:
        candidates = [
            p for p in itertools.permutations(range(doc.n)) if p != identity and p not in used
        ]
        return rng.sample(candidates, count)
    drawn: list[tuple[int, ...]] = []
    seen = set(used)
    scratch = list(range(doc.n))
    while len(drawn) < count:
        rng.shuffle(scratch)
        order = tuple(scratch)
        if order == identity or order in seen:
            continue
        seen.add(order)
        drawn.append(order)
    return drawn


@dataclass(frozen=True)
class TrainingInstance:
    """One positive document paired with its negatives.

    Permutation negatives are stored as index arrays over the positive's
    sentences; intrusion negatives are stored as full documents.
    """

    positive: Document
    negative_kind: str
    repetition_index: int = 0
    orders: tuple[tuple[int, ...], ...] = ()
    negative_docs: tuple[Document, ...] = ()

    def __post_init__(self) -> None:
        if self.negative_kind not in NEGATIVE_KINDS:
            raise ValueError(f"unknown negative kind {self.negative_kind!r}")
        if self.repetition_index < 0:
            raise ValueError("repetition_index must be >= 0")
        object.__setattr__(self, "orders", tuple(tuple(o) for o in self.orders))
        object.__setattr__(self, "negative_docs", tuple(self.negative_docs))
        if self.negative_kind == "permutation":
            if not self.orders or self.negative_docs:
                raise ValueError("permutation instances need orders and no negative_docs")
            for order in self.orders:
                validate_order(order, self.positive.n)
                if is_identity(order):
                    raise ValueError("negative equals the positive (identity order)")
            if len(set(self.orders)) != len(self.orders):
                raise ValueError("duplicate negative orders within an instance")
        else:
            if not self.negative_docs or self.orders:
                raise ValueError("intrusion instances need negative_docs and no orders")

    @property
    def num_negatives(self) -> int:
        if self.negative_kind == "permutation":
            return len(self.orders)
        return len(self.negative_docs)

    def negative(self, index: int) -> Document:
        """Materialize negative ``index`` as a document."""
        if self.negative_kind == "intrusion":
            return self.negative_docs[index]
        order = self.orders[index]
        return Document(
            f"{self.positive.id}#r{self.repetition_index}p{index}",
            tuple(self.positive.sentences[i] for i in order),
            self.positive.token_count,
        )

    @property
    def negatives(self) -> list[Document]:
        return [self.negative(i) for i in range(self.num_negatives)]

    def to_json(self) -> dict:
        record = {
            "positive_id": self.positive.id,
            "repetition": self.repetition_index,
            "negative_kind": self.negative_kind,
        }
        if self.negative_kind == "permutation":
            record["orders"] = [list(o) for o in self.orders]
        else:
            record["negative_docs"] = [d.to_json() for d in self.negative_docs]
        return record


def build_permuted_dataset(
    corpus: Corpus | Iterable[Document],
    repetitions: int = 20,
    negatives_per_instance: int = 5,
    seed: int = 0,
) -> list[TrainingInstance]:
    """Build the permuted-document task.

    Each positive appears ``repetitions`` times with ``negatives_per_instance``
    fresh permutation negatives; no order repeats across an instance's
    repetitions. When a short document's pool of n! - 1 orders runs out,
    later repetitions are dropped with a warning.
    """
    if repetitions < 0 or negatives_per_instance < 1:
        raise ValueError("repetitions must be >= 0 and negatives_per_instance >= 1")
    instances: list[TrainingInstance] = []
    for doc in corpus:
        if doc.n < 4:
            raise ValueError(f"document {doc.id!r} has n={doc.n} < 4; preprocess first")
        used: set[tuple[int, ...]] = set()
        for repetition in range(repetitions):
            rng = stream_rng(seed, doc.id, repetition)
            try:
                orders = sample_permutations(doc, negatives_per_instance, used, rng)
            except PermutationPoolExhausted:
                logger.warning(
                    "document %s: permutation pool exhausted after %d of %d repetitions",
                    doc.id,
                    repetition,
                    repetitions,
                )
                break
            used.update(orders)
            instances.append(
                TrainingInstance(doc, "permutation", repetition, orders=tuple(orders))
            )
    return instances


def build_mining_dataset(
    corpus: Corpus | Iterable[Document],
    repetitions: int = 20,
    candidates_per_instance: int = 50,
    seed: int = 0,
) -> list[TrainingInstance]:
    """Permuted-document task with wide candidate pools for hard-negative mining."""
    return build_permuted_dataset(corpus, repetitions, candidates_per_instance, seed)


def content_words(text: str | Iterable[str]) -> set[str]:
    """Lowercased alphabetic token types minus a small stopword list."""
    if not isinstance(text, str):
        text = " ".join(text)
    words = {w.strip(".,;:!?\"'()").lower() for w in text.split()}
    return {w for w in words if w.isalpha() and w not in _STOPWORDS}


def build_intrusion_dataset(
    corpus: Corpus,
    similarity: str = "random",
    seed: int = 0,
) -> list[TrainingInstance]:
    """Build the sentence-intrusion task: one replaced sentence per positive.

    The intruding sentence comes from a different document, picked uniformly
    (``similarity="random"``) or by highest content-word overlap with the
    positive (``similarity="lexical-overlap"``, ties broken uniformly). The
    replacement never equals the sentence it displaces.
    """
    if similarity not in ("random", "lexical-overlap"):
        raise ValueError(f"unknown similarity {similarity!r}")
    docs = list(corpus)
    if len(docs) < 2:
        raise ValueError("intrusion construction needs at least 2 documents")
    instances: list[TrainingInstance] = []
    for doc in docs:
        rng = stream_rng(seed, doc.id, "intrusion")
        position = rng.randrange(doc.n)
        replaced = doc.sentences[position]
        candidates = [
            s for other in docs if other.id != doc.id for s in other.sentences if s != replaced
        ]
        if not candidates:
            logger.warning("document %s: no usable intruder sentence; skipped", doc.id)
            continue
        if similarity == "random":
            intruder = rng.choice(candidates)
        else:
            doc_words = content_words(doc.sentences)
            overlaps = [len(content_words(c) & doc_words) for c in candidates]
            best = max(overlaps)
            intruder = rng.choice([c for c, o in zip(candidates, overlaps) if o == best])
        sentences = list(doc.sentences)
        sentences[position] = intruder
        negative = Document.make(f"{doc.id}#intr{position}", sentences)
        instances.append(TrainingInstance(doc, "intrusion", 0, negative_docs=(negative,)))
    return instances


def save_instances(instances: Iterable[TrainingInstance], path: str | Path) -> None:
    """Write instances as JSON-lines, deterministically."""
    lines = [json.dumps(inst.to_json(), sort_keys=True, ensure_ascii=False) for inst in instances]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def load_instances(path: str | Path, corpus: Corpus) -> list[TrainingInstance]:
    """Read an instance file, resolving positives against ``corpus``."""
    instances = []
    path = Path(path)
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            positive_id = record["positive_id"]
            if positive_id not in corpus:
                raise ValueError(f"unknown positive_id {positive_id!r}")
            positive = corpus.get(positive_id)
            kind = record["negative_kind"]
            if kind == "permutation":
                instance = TrainingInstance(
                    positive,
                    kind,
                    int(record["repetition"]),
                    orders=tuple(tuple(o) for o in record["orders"]),
                )
            else:
                instance = TrainingInstance(
                    positive,
                    kind,
                    int(record["repetition"]),
                    negative_docs=tuple(Document.from_json(d) for d in record["negative_docs"]),
                )
        except (KeyError, ValueError, TypeError) as exc:
            raise ValueError(f"{path}:{lineno}: bad instance record ({exc})") from exc
        instances.append(instance)
    return instances


@dataclass(frozen=True)
class EvalPair:
    """An ordered evaluation pair: the positive should outscore the negative."""

    pair_id: str
    positive: Document
    negative: Document
    annotator_labels: tuple[str, ...] | None = None
    category: str | None = None
    tie: bool = False

    def __post_init__(self) -> None:
        if self.positive.sentences == self.negative.sentences:
            raise ValueError(f"pair {self.pair_id!r}: positive equals negative textually")
        if self.annotator_labels is not None:
            object.__setattr__(self, "annotator_labels", tuple(self.annotator_labels))
            for label in self.annotator_labels:
                if label not in ("a", "b", "tie"):
                    raise ValueError(f"pair {self.pair_id!r}: bad label {label!r}")

    def to_json(self) -> dict:
        record = {
            "pair_id": self.pair_id,
            "pos": self.positive.to_json(),
            "neg": self.negative.to_json(),
        }
        if self.annotator_labels is not None:
            record["labels"] = list(self.annotator_labels)
        if self.category is not None:
            record["category"] = self.category
        if self.tie:
            record["tie"] = True
        return record


@dataclass(frozen=True)
class RatedText:
    """A system output with per-annotator quality ratings, grouped by source."""

    doc: Document
    ratings: tuple[float, ...]
    group: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "ratings", tuple(float(r) for r in self.ratings))
        if not self.ratings:
            raise ValueError(f"{self.doc.id}: needs at least one rating")

    @property
    def mean_rating(self) -> float:
        return sum(self.ratings) / len(self.ratings)


def pair_from_ratings(rated: Iterable[RatedText]) -> list[EvalPair]:
    """Turn rated texts into ordered pairs, one per unordered same-group pair.

    The higher-mean text becomes the positive; equal means are emitted with
    the tie flag set (downstream accuracy excludes them by default). Groups
    with fewer than two texts are skipped; textually identical pairs are
    skipped with a warning.
    """
    groups: dict[str, list[RatedText]] = {}
    for item in rated:
        groups.setdefault(item.group, []).append(item)
    pairs: list[EvalPair] = []
    for group in groups.values():
        if len(group) < 2:
            logger.warning("group %r has < 2 texts; skipped", group[0].group)
            continue
        for first, second in itertools.combinations(group, 2):
            if first.doc.sentences == second.doc.sentences:
                logger.warning(
                    "pair %s/%s is textually identical; skipped", first.doc.id, second.doc.id
                )
                continue
            tie = first.mean_rating == second.mean_rating
            if second.mean_rating > first.mean_rating:
                first, second = second, first
            pairs.append(
                EvalPair(
                    f"{first.doc.id}-vs-{second.doc.id}",
                    first.doc,
                    second.doc,
                    tie=tie,
                )
            )
    return pairs


class EvalPairFormatError(Exception):
    """An eval-pair file that violates its schema."""


EVAL_PAIR_SCHEMAS = ("generic", "judgments", "probes")


def save_eval_pairs(pairs: Iterable[EvalPair], path: str | Path) -> None:
    lines = [json.dumps(p.to_json(), sort_keys=True, ensure_ascii=False) for p in pairs]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def load_eval_pairs(path: str | Path, schema: str = "generic") -> list[EvalPair]:
    """Read an eval-pair file under one of the three schemas.

    ``judgments`` additionally requires per-annotator labels, ``probes``
    requires a category. Violations are fatal and name the offending line.
    """
    if schema not in EVAL_PAIR_SCHEMAS:
        raise ValueError(f"unknown schema {schema!r}")
    pairs = []
    path = Path(path)
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            if not isinstance(record, dict):
                raise ValueError("line is not an object")
            for key in ("pair_id", "pos", "neg"):
                if key not in record:
                    raise ValueError(f"missing {key!r}")
            if schema == "judgments" and "labels" not in record:
                raise ValueError("judgments schema requires 'labels'")
            if schema == "probes" and "category" not in record:
                raise ValueError("probes schema requires 'category'")
            labels = record.get("labels")
            pair = EvalPair(
                str(record["pair_id"]),
                Document.from_json(record["pos"]),
                Document.from_json(record["neg"]),
                annotator_labels=tuple(labels) if labels is not None else None,
                category=record.get("category"),
                tie=bool(record.get("tie", False)),
            )
        except (ValueError, TypeError, KeyError) as exc:
            raise EvalPairFormatError(f"{path}:{lineno}: {exc}") from exc
        pairs.append(pair)
    return pairs
