"""Corpus loading, validation, preprocessing, and block partitioning."""

from __future__ import annotations

import json

import pytest

from cohscore.corpus import (
    Corpus,
    CorpusFormatError,
    Document,
    load_corpus,
    partition_blocks,
    prepare_corpus,
    preprocess,
    save_corpus,
    whitespace_token_count,
)

from conftest import make_doc


def test_whitespace_token_count():
    assert whitespace_token_count("one two three") == 3
    assert whitespace_token_count("  padded   out  ") == 2
    assert whitespace_token_count("single") == 1


class TestDocument:
    def test_make_counts_tokens(self):
        doc = Document.make("d", ["a b c.", "d e."])
        assert doc.token_count == 5
        assert doc.n == 2

    def test_rejects_empty_sentence_list(self):
        with pytest.raises(ValueError):
            Document("d", (), 0)

    def test_rejects_blank_sentence(self):
        with pytest.raises(ValueError):
            Document.make("d", ["fine.", "   "])

    def test_rejects_blank_id(self):
        with pytest.raises(ValueError):
            Document.make("", ["fine."])

    def test_json_round_trip(self):
        doc = make_doc("d1", n=4)
        assert Document.from_json(doc.to_json()) == doc


class TestCorpus:
    def test_duplicate_ids_rejected(self):
        doc = make_doc("same")
        with pytest.raises(ValueError):
            Corpus([doc, doc])

    def test_lookup(self, small_corpus):
        assert "d0" in small_corpus
        assert small_corpus.get("d0").id == "d0"
        with pytest.raises(KeyError):
            small_corpus.get("missing")


class TestLoadCorpus:
    def test_jsonl_round_trip(self, tmp_path, small_corpus):
        path = tmp_path / "corpus.jsonl"
        save_corpus(small_corpus, path)
        loaded = load_corpus(path)
        assert list(loaded) == list(small_corpus)
        # deterministic serialization: a second save is byte-identical
        first = path.read_bytes()
        save_corpus(loaded, path)
        assert path.read_bytes() == first

    def test_malformed_lines_are_skipped_and_counted(self, tmp_path, caplog):
        path = tmp_path / "corpus.jsonl"
        good = json.dumps(make_doc("ok", n=4).to_json())
        path.write_text(good + "\nnot json\n" + json.dumps({"id": "x"}) + "\n")
        with caplog.at_level("WARNING"):
            corpus = load_corpus(path)
        assert len(corpus) == 1
        assert corpus.skipped == 2
        assert ":2: skipping malformed record" in caplog.text

    def test_plain_text_format(self, tmp_path):
        # blank lines separate documents; each non-blank line is a sentence
        path = tmp_path / "docs.txt"
        path.write_text("First sentence here.\nOnly line two.\n\nSecond doc. Again.\n")
        corpus = load_corpus(path, fmt="text")
        assert len(corpus) == 2
        assert corpus.documents[0].n == 2
        assert corpus.documents[1].n == 1

    def test_unknown_format_rejected(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text("{}\n")
        with pytest.raises(ValueError):
            load_corpus(path, fmt="parquet")

    def test_missing_file_is_fatal(self, tmp_path):
        with pytest.raises(CorpusFormatError):
            load_corpus(tmp_path / "nope.jsonl")


class TestPreprocess:
    def test_short_documents_dropped(self):
        assert preprocess(make_doc(n=3), min_sentences=4) is None

    def test_keeps_compliant_document(self):
        doc = make_doc(n=5)
        assert preprocess(doc, min_sentences=4, max_tokens=600) == doc

    def test_trailing_sentences_removed_to_fit_budget(self):
        # four sentences of 5 tokens each; budget 12 keeps exactly two
        doc = Document.make("d", ["a b c d e."[:0] or f"w{i} x y z q." for i in range(4)])
        assert doc.token_count == 20
        trimmed = preprocess(doc, min_sentences=2, max_tokens=12)
        assert trimmed is not None
        assert trimmed.n == 2
        assert trimmed.sentences == doc.sentences[:2]
        assert trimmed.token_count == 10

    def test_truncation_below_floor_drops_document(self):
        doc = Document.make("d", [f"w{i} x y z q." for i in range(4)])
        assert preprocess(doc, min_sentences=3, max_tokens=12) is None

    def test_boundary_budget_exact_fit(self):
        doc = Document.make("d", ["a b.", "c d.", "e f."])
        kept = preprocess(doc, min_sentences=2, max_tokens=6)
        assert kept is not None and kept.n == 3


class TestPartitionBlocks:
    def test_short_document_passes_through(self):
        doc = make_doc(n=19)
        assert partition_blocks(doc, threshold=20, block_size=10) == [doc]

    def test_twenty_five_sentences_make_three_blocks(self):
        doc = make_doc(n=25)
        blocks = partition_blocks(doc, threshold=20, block_size=10, min_block_sentences=4)
        assert [b.n for b in blocks] == [10, 10, 5]
        assert [b.id for b in blocks] == ["doc#b0", "doc#b1", "doc#b2"]
        # blocks are consecutive slices of the original
        rebuilt = [s for b in blocks for s in b.sentences]
        assert rebuilt == list(doc.sentences)

    def test_small_remainder_dropped(self):
        doc = make_doc(n=22)
        blocks = partition_blocks(doc, threshold=20, block_size=10, min_block_sentences=4)
        assert [b.n for b in blocks] == [10, 10]

    def test_exact_multiple(self):
        doc = make_doc(n=20)
        blocks = partition_blocks(doc, threshold=20, block_size=10)
        assert [b.n for b in blocks] == [10, 10]


def test_prepare_corpus_composes_steps():
    docs = [
        make_doc("long", n=25),
        make_doc("short", n=3),
        make_doc("plain", n=8),
    ]
    prepared = prepare_corpus(Corpus(docs), min_sentences=4, max_tokens=600,
                              block_threshold=20, block_size=10)
    ids = [d.id for d in prepared]
    assert ids == ["long#b0", "long#b1", "long#b2", "plain"]
