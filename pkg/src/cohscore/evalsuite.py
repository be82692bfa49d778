"""Evaluation protocols: pairwise ranking accuracy, chance-corrected agreement
with human judgments, and categorized linguistic probes.

Scoring is injected as a callable (or anything with ``score_document``) so the
protocols stay independent of any particular model.
"""

from __future__ import annotations

import hashlib
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from cohscore.corpus import Document
from cohscore.taskgen import EvalPair

logger = logging.getLogger(__name__)

ScoreFn = Callable[[Document], float]


def _resolve_score_fn(scorer) -> ScoreFn:
    if callable(scorer) and not hasattr(scorer, "score_document"):
        return scorer
    return scorer.score_document


@dataclass
class EvalReport:
    """Metric value plus the bookkeeping that makes it auditable."""

    dataset: str
    metric: str
    value: float | None
    pair_count: int
    tie_count: int = 0
    per_category: dict[str, dict] = field(default_factory=dict)
    details: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "dataset": self.dataset,
            "metric": self.metric,
            "value": self.value,
            "pair_count": self.pair_count,
            "tie_count": self.tie_count,
            "per_category": self.per_category,
            "details": self.details,
            "provenance": self.provenance,
        }

    def to_text(self) -> str:
        lines = [f"dataset: {self.dataset}", f"metric: {self.metric}"]
        value = "undefined" if self.value is None else f"{self.value:.4f}"
        lines.append(f"value: {value}  (pairs={self.pair_count}, ties={self.tie_count})")
        if self.per_category:
            width = max(len(c) for c in self.per_category)
            lines.append("")
            lines.append(f"{'category'.ljust(width)}  accuracy  pairs  ties")
            for category in sorted(self.per_category):
                stats = self.per_category[category]
                lines.append(
                    f"{category.ljust(width)}  {stats['accuracy']:8.4f}  "
                    f"{stats['pairs']:5d}  {stats['ties']:4d}"
                )
        for key in sorted(self.details):
            lines.append(f"{key}: {self.details[key]}")
        return "\n".join(lines) + "\n"


def _judge_pairs(score_fn: ScoreFn, pairs: Sequence[EvalPair]) -> tuple[int, int, int]:
    """Count (correct, wrong, score_ties) over pairs."""
    correct = wrong = ties = 0
    for pair in pairs:
        s_pos = score_fn(pair.positive)
        s_neg = score_fn(pair.negative)
        if s_pos > s_neg:
            correct += 1
        elif s_pos == s_neg:
            ties += 1  # a tie can't be a correct ranking
        else:
            wrong += 1
    return correct, wrong, ties


def pairwise_accuracy(
    scorer,
    pairs: Sequence[EvalPair],
    dataset: str = "",
    include_rating_ties: bool = False,
    provenance: dict | None = None,
) -> EvalReport:
    """Fraction of pairs where the positive strictly outscores the negative.

    Model score ties count as incorrect and are tallied. Pairs flagged as
    rating ties are excluded from the denominator unless
    ``include_rating_ties``, in which case they count as incorrect too.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("no pairs to evaluate")
    score_fn = _resolve_score_fn(scorer)
    rating_ties = [p for p in pairs if p.tie]
    judged = pairs if include_rating_ties else [p for p in pairs if not p.tie]
    if not judged:
        raise ValueError("all pairs are rating ties and ties are excluded")
    scorable = [p for p in judged if not p.tie]
    correct, wrong, score_ties = _judge_pairs(score_fn, scorable)
    denominator = len(judged)
    value = correct / denominator
    return EvalReport(
        dataset=dataset,
        metric="pairwise_accuracy",
        value=value,
        pair_count=denominator,
        tie_count=score_ties,
        details={
            "input_pairs": len(pairs),
            "correct": correct,
            "wrong": wrong,
            "rating_ties": len(rating_ties),
            "rating_ties_included": include_rating_ties,
        },
        provenance=provenance or {},
    )


def _is_missing(value) -> bool:
    if value is None:
        return True
    return isinstance(value, float) and value != value


def krippendorff_alpha(ratings: Sequence[Sequence]) -> float | None:
    """Nominal-level Krippendorff's alpha over a raters-by-items matrix.

    Missing entries are None (or NaN). Computed from the coincidence matrix:
    each unit with m >= 2 values contributes 1/(m-1) per ordered value pair.
    Returns None (undefined) when every pairable value carries the same
    label, since expected disagreement is then zero.
    """
    rows = [list(r) for r in ratings]
    if not rows:
        raise ValueError("empty ratings matrix")
    if len({len(r) for r in rows}) != 1:
        raise ValueError("ratings rows must have equal length")
    coincidence: Counter = Counter()
    n_total = 0.0
    for item in range(len(rows[0])):
        values = [row[item] for row in rows if not _is_missing(row[item])]
        m = len(values)
        if m < 2:
            continue
        weight = 1.0 / (m - 1)
        for i, v_i in enumerate(values):
            for j, v_j in enumerate(values):
                if i != j:
                    coincidence[(v_i, v_j)] += weight
        n_total += m
    if n_total == 0:
        raise ValueError("no item has two or more ratings")
    labels = sorted({c for c, _ in coincidence}, key=repr)
    if len(labels) < 2:
        return None  # expected disagreement is zero: alpha undefined
    marginals = {c: sum(coincidence[(c, k)] for k in labels) for c in labels}
    observed_agreement = sum(coincidence[(c, c)] for c in labels) / n_total
    expected_agreement = sum(m * (m - 1) for m in marginals.values()) / (n_total * (n_total - 1))
    if expected_agreement == 1.0:
        return None
    return (observed_agreement - expected_agreement) / (1.0 - expected_agreement)


AGREEMENT_MODES = ("additional-rater", "vs-majority")


def model_agreement(
    scorer,
    pairs: Sequence[EvalPair],
    dataset: str = "",
    mode: str = "additional-rater",
    provenance: dict | None = None,
) -> EvalReport:
    """Krippendorff's alpha between the model's rankings and annotator labels.

    The model labels each pair "a" when the first document outscores the
    second, "b" for the reverse; exact score ties exclude the item, and
    annotator "tie" labels are treated as missing. ``mode`` either adds the
    model as one more rater or compares it against the per-item majority
    label.
    """
    if mode not in AGREEMENT_MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {AGREEMENT_MODES}")
    pairs = [p for p in pairs if p.annotator_labels]
    if not pairs:
        raise ValueError("no pairs carry annotator labels")
    score_fn = _resolve_score_fn(scorer)
    model_labels: list[str] = []
    kept: list[EvalPair] = []
    excluded_ties = 0
    for pair in pairs:
        s_a = score_fn(pair.positive)
        s_b = score_fn(pair.negative)
        if s_a == s_b:
            excluded_ties += 1
            continue
        model_labels.append("a" if s_a > s_b else "b")
        kept.append(pair)
    if not kept:
        raise ValueError("every pair was excluded by a model score tie")

    def annotator_value(label: str) -> str | None:
        return label if label in ("a", "b") else None

    if mode == "additional-rater":
        num_annotators = max(len(p.annotator_labels) for p in kept)
        matrix: list[list] = []
        for rater in range(num_annotators):
            matrix.append(
                [
                    annotator_value(p.annotator_labels[rater])
                    if rater < len(p.annotator_labels)
                    else None
                    for p in kept
                ]
            )
        matrix.append(list(model_labels))
    else:
        majorities: list[str | None] = []
        for pair in kept:
            counts = Counter(l for l in pair.annotator_labels if l in ("a", "b"))
            if not counts:
                majorities.append(None)
                continue
            ranked = counts.most_common()
            if len(ranked) > 1 and ranked[0][1] == ranked[1][1]:
                majorities.append(None)  # split vote: drop the item
            else:
                majorities.append(ranked[0][0])
        matrix = [majorities, list(model_labels)]
    value = krippendorff_alpha(matrix)
    logger.info("model_agreement | mode=%s items=%d alpha=%s", mode, len(kept), value)
    return EvalReport(
        dataset=dataset,
        metric="krippendorff_alpha",
        value=value,
        pair_count=len(kept),
        tie_count=excluded_ties,
        details={"mode": mode, "input_pairs": len(pairs)},
        provenance=provenance or {},
    )


def probe_accuracy(
    scorer,
    pairs: Sequence[EvalPair],
    dataset: str = "",
    provenance: dict | None = None,
) -> EvalReport:
    """Per-category pairwise accuracy plus the macro average across categories."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("no pairs to evaluate")
    for pair in pairs:
        if not pair.category:
            raise ValueError(f"pair {pair.pair_id!r} has no category")
    score_fn = _resolve_score_fn(scorer)
    by_category: dict[str, list[EvalPair]] = {}
    for pair in pairs:
        by_category.setdefault(pair.category, []).append(pair)
    per_category = {}
    total_ties = 0
    for category, members in sorted(by_category.items()):
        correct, _, ties = _judge_pairs(score_fn, members)
        per_category[category] = {
            "accuracy": correct / len(members),
            "pairs": len(members),
            "ties": ties,
        }
        total_ties += ties
    macro = sum(stats["accuracy"] for stats in per_category.values()) / len(per_category)
    return EvalReport(
        dataset=dataset,
        metric="probe_accuracy",
        value=macro,
        pair_count=len(pairs),
        tie_count=total_ties,
        per_category=per_category,
        provenance=provenance or {},
    )


def sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(65536), b""):
            digest.update(chunk)
    return f"sha256:{digest.hexdigest()}"


def save_report(report: EvalReport, json_path: str | Path, text_path: str | Path | None = None) -> None:
    Path(json_path).write_text(json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n")
    if text_path is not None:
        Path(text_path).write_text(report.to_text())
