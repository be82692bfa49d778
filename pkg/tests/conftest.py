"""Shared fixtures and the acceptance-summary hook.

The acceptance suite (tests/test_acceptance.py) gets one PASS/FAIL line per
criterion in the terminal summary so a run's verdict can be read at a glance.
"""

from __future__ import annotations

import random

import pytest
import torch

from cohscore.corpus import Corpus, Document
from cohscore.scorer import CoherenceScorer, TinyEncoderConfig, TinyTextEncoder


def pytest_configure(config):
    torch.set_num_threads(1)


@pytest.fixture
def rng():
    return random.Random(0)


def make_doc(doc_id: str = "doc", n: int = 5, words_per_sentence: int = 4,
             seed: int = 0) -> Document:
    """A deterministic document with `n` distinct sentences."""
    r = random.Random(seed)
    vocab = ["alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta"]
    sentences = []
    for i in range(n):
        words = [f"s{i}"] + r.choices(vocab, k=words_per_sentence - 1)
        sentences.append(" ".join(words) + ".")
    return Document.make(doc_id, sentences)


@pytest.fixture
def doc():
    return make_doc()


@pytest.fixture
def small_corpus():
    return Corpus([make_doc(f"d{i}", n=4 + i % 3, seed=i) for i in range(6)])


SMALL_ENCODER = dict(dim=16, layers=1, heads=2, vocab_size=256, max_tokens=128)


def make_scorer(seed: int = 0, **overrides) -> CoherenceScorer:
    """A small scorer for fast unit tests (not the acceptance-size backbone)."""
    kwargs = dict(SMALL_ENCODER)
    kwargs.update(overrides)
    encoder = TinyTextEncoder(TinyEncoderConfig(seed=seed, **kwargs))
    return CoherenceScorer(encoder, head_seed=seed)


@pytest.fixture
def scorer():
    return make_scorer()


# ---------------------------------------------------------------------------
# Acceptance summary: one line per criterion.

_ACCEPTANCE_RESULTS: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call":
        _ACCEPTANCE_RESULTS[name] = "PASS" if report.passed else "FAIL"
    elif report.when == "setup" and report.outcome != "passed":
        _ACCEPTANCE_RESULTS[name] = "SKIP" if report.skipped else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    width = max(len(n) for n in _ACCEPTANCE_RESULTS)
    for name, verdict in _ACCEPTANCE_RESULTS.items():
        terminalreporter.write_line(f"{name.ljust(width)}  {verdict}")
