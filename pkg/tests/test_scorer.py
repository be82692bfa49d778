"""Backbone encoders and the linear scoring head."""

from __future__ import annotations

import math

import pytest
import torch

from cohscore.corpus import Document
from cohscore.scorer import (
    CoherenceScorer,
    HashingTokenizer,
    TinyEncoderConfig,
    TinyTextEncoder,
    make_backbone,
)

from conftest import make_doc, make_scorer


class TestHashingTokenizer:
    def test_reserved_ids_and_range(self):
        tok = HashingTokenizer(vocab_size=128)
        doc = Document.make("d", ["alpha beta.", "gamma."])
        ids = tok.encode(doc)
        assert tok.SEP in ids
        assert tok.PAD not in ids
        assert all(0 <= i < 128 for i in ids)
        content = [i for i in ids if i != tok.SEP]
        assert all(i >= 2 for i in content)

    def test_separator_between_sentences(self):
        tok = HashingTokenizer(vocab_size=128)
        doc = Document.make("d", ["a b.", "c."])
        ids = tok.encode(doc)
        assert ids.count(tok.SEP) == 1

    def test_deterministic(self):
        tok = HashingTokenizer(vocab_size=512)
        doc = make_doc(n=4)
        assert tok.encode(doc) == tok.encode(doc)

    def test_same_word_same_id(self):
        tok = HashingTokenizer(vocab_size=512)
        a = tok.encode(Document.make("a", ["shared word."]))
        b = tok.encode(Document.make("b", ["shared thing."]))
        assert a[0] == b[0]


class TestTinyTextEncoder:
    def test_seeded_init_is_reproducible(self):
        enc_a = TinyTextEncoder(TinyEncoderConfig(dim=16, layers=1, heads=2, seed=3))
        enc_b = TinyTextEncoder(TinyEncoderConfig(dim=16, layers=1, heads=2, seed=3))
        for p_a, p_b in zip(enc_a.parameters(), enc_b.parameters()):
            assert torch.equal(p_a, p_b)

    def test_different_seeds_differ(self):
        enc_a = TinyTextEncoder(TinyEncoderConfig(dim=16, layers=1, heads=2, seed=3))
        enc_b = TinyTextEncoder(TinyEncoderConfig(dim=16, layers=1, heads=2, seed=4))
        assert any(
            not torch.equal(p_a, p_b)
            for p_a, p_b in zip(enc_a.parameters(), enc_b.parameters())
        )

    def test_init_does_not_disturb_global_rng(self):
        torch.manual_seed(77)
        before = torch.rand(3)
        torch.manual_seed(77)
        TinyTextEncoder(TinyEncoderConfig(dim=16, layers=1, heads=2, seed=3))
        after = torch.rand(3)
        assert torch.equal(before, after)

    def test_output_shape_and_dtype(self, doc):
        enc = TinyTextEncoder(TinyEncoderConfig(dim=16, layers=1, heads=2))
        out = enc(doc)
        assert out.z.shape == (16,)
        assert out.z.dtype == torch.float64

    def test_float64_is_the_default(self):
        enc = TinyTextEncoder()
        assert all(p.dtype == torch.float64 for p in enc.parameters())

    def test_long_document_truncated_with_warning(self, caplog):
        enc = TinyTextEncoder(TinyEncoderConfig(dim=16, layers=1, heads=2, max_tokens=16))
        long_doc = make_doc(n=12, words_per_sentence=6)
        with caplog.at_level("WARNING"):
            out = enc(long_doc)
        assert out.z.shape == (16,)
        assert "truncat" in caplog.text.lower()

    def test_order_sensitivity(self):
        """Permuting sentences must change the representation."""
        enc = TinyTextEncoder(TinyEncoderConfig(dim=16, layers=1, heads=2))
        doc = make_doc(n=5)
        flipped = Document("flipped", tuple(reversed(doc.sentences)), doc.token_count)
        assert not torch.allclose(enc(doc).z, enc(flipped).z)


class TestMakeBackbone:
    def test_tiny_kind(self):
        enc = make_backbone("tiny", {"dim": 16, "layers": 1, "heads": 2})
        assert enc.dim == 16
        assert enc.kind == "tiny"

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            make_backbone("bert-enormous")


class TestCoherenceScorer:
    def test_score_document_is_finite_float(self, scorer, doc):
        value = scorer.score_document(doc)
        assert isinstance(value, float)
        assert math.isfinite(value)

    def test_scoring_is_deterministic(self, scorer, doc):
        assert scorer.score_document(doc) == scorer.score_document(doc)

    def test_head_seed_controls_head_only(self, doc):
        a = make_scorer(seed=0)
        b = make_scorer(seed=0)
        assert a.score_document(doc) == b.score_document(doc)

    def test_score_documents_matches_single_calls(self, scorer):
        docs = [make_doc(f"d{i}", n=4, seed=i) for i in range(3)]
        batch = scorer.score_documents(docs)
        assert batch == [scorer.score_document(d) for d in docs]

    def test_non_finite_score_raises(self, scorer, doc):
        with torch.no_grad():
            scorer.head.weight.fill_(float("nan"))
        with pytest.raises(ValueError):
            scorer.score_document(doc)

    def test_save_load_round_trip(self, tmp_path, scorer):
        docs = [make_doc(f"d{i}", n=5, seed=i) for i in range(4)]
        before = [scorer.score_document(d) for d in docs]
        scorer.save(tmp_path / "model")
        loaded = CoherenceScorer.load(tmp_path / "model")
        after = [loaded.score_document(d) for d in docs]
        assert after == before

    def test_load_rejects_wrong_version(self, tmp_path, scorer):
        import json

        scorer.save(tmp_path / "model")
        meta_path = tmp_path / "model" / "meta.json"
        meta = json.loads(meta_path.read_text())
        meta["format_version"] = 99
        meta_path.write_text(json.dumps(meta))
        with pytest.raises(ValueError):
            CoherenceScorer.load(tmp_path / "model")

    def test_load_missing_directory(self, tmp_path):
        with pytest.raises((FileNotFoundError, OSError, ValueError)):
            CoherenceScorer.load(tmp_path / "absent")

    def test_gradients_reach_every_parameter(self, doc):
        """One backward pass touches the head and all encoder parameters."""
        scorer = make_scorer()
        scorer.score(doc).backward()
        missing = [
            name
            for name, p in scorer.named_parameters()
            if p.grad is None or torch.all(p.grad == 0)
        ]
        # positional rows beyond the document length legitimately get no grad
        assert all("position" in name or "embed" in name for name in missing)
