"""Momentum (EMA) encoder, the FIFO negative queue, and positive slicing."""

from __future__ import annotations

import collections
import random

import pytest
import torch

from cohscore.momentum import MomentumEncoder, NegativeQueue, slice_positive

from conftest import make_doc, make_scorer


class TestMomentumEncoderUpdate:
    def test_ema_arithmetic_on_known_values(self):
        """One update with coefficient 0.9 moves each weight 10% of the gap."""
        base = torch.nn.Linear(2, 2, dtype=torch.float64)
        shadow = MomentumEncoder(base)
        with torch.no_grad():
            for p in base.parameters():
                p.add_(1.0)
        shadow.update(base, 0.9)
        for p_base, p_shadow in zip(base.parameters(), shadow.parameters()):
            expected = 0.9 * (p_base - 1.0) + 0.1 * p_base
            torch.testing.assert_close(p_shadow, expected, rtol=0, atol=1e-15)

    def test_geometric_decay_toward_frozen_base(self):
        """With the base frozen, ||shadow - base|| shrinks by the coefficient
        exactly once per update, so after T steps the gap is mu^T of the
        original (checked to 1e-10 for T up to 20)."""
        coefficient = 0.97
        base = torch.nn.Linear(4, 3, dtype=torch.float64)
        shadow = MomentumEncoder(base)
        with torch.no_grad():
            for p in base.parameters():
                p.add_(torch.randn_like(p))

        @torch.no_grad()
        def gap() -> float:
            total = 0.0
            for p_base, p_shadow in zip(base.parameters(), shadow.parameters()):
                total += float(torch.sum((p_shadow - p_base) ** 2))
            return total ** 0.5

        initial = gap()
        for step in range(1, 21):
            shadow.update(base, coefficient)
            assert gap() == pytest.approx(initial * coefficient ** step, abs=1e-10)

    def test_extreme_coefficient_keeps_tiny_steps(self):
        # the working coefficient leaves one part in 1e7 per update, which
        # only survives in double precision
        base = torch.nn.Linear(2, 2, dtype=torch.float64)
        shadow = MomentumEncoder(base)
        with torch.no_grad():
            for p in base.parameters():
                p.add_(1.0)
        shadow.update(base, 0.9999999)
        for p_base, p_shadow in zip(base.parameters(), shadow.parameters()):
            torch.testing.assert_close(p_shadow, p_base - 1.0 + 1e-7, rtol=0, atol=1e-12)

    def test_coefficient_bounds(self):
        base = torch.nn.Linear(2, 2, dtype=torch.float64)
        shadow = MomentumEncoder(base)
        with pytest.raises(ValueError):
            shadow.update(base, 1.0)
        with pytest.raises(ValueError):
            shadow.update(base, -0.1)

    def test_mismatched_encoder_rejected(self):
        # architecture mismatch is a programming error (RuntimeError), kept
        # distinct from the ValueError family the trainer treats as divergence
        shadow = MomentumEncoder(torch.nn.Linear(2, 2, dtype=torch.float64))
        with pytest.raises(RuntimeError):
            shadow.update(torch.nn.Linear(3, 3, dtype=torch.float64), 0.9)


class TestMomentumEncoderIsolation:
    def test_parameters_never_require_grad(self):
        scorer = make_scorer()
        shadow = MomentumEncoder(scorer.encoder)
        assert all(not p.requires_grad for p in shadow.parameters())

    def test_deep_copy_is_independent(self):
        scorer = make_scorer()
        shadow = MomentumEncoder(scorer.encoder)
        with torch.no_grad():
            for p in scorer.encoder.parameters():
                p.add_(1.0)
        assert any(
            not torch.equal(p_base, p_shadow)
            for p_base, p_shadow in zip(scorer.encoder.parameters(), shadow.parameters())
        )

    def test_encode_returns_detached_rep(self, doc):
        scorer = make_scorer()
        shadow = MomentumEncoder(scorer.encoder)
        z = shadow.encode(doc)
        assert not z.requires_grad
        assert z.shape == (scorer.dim,)

    def test_state_dict_round_trip(self, doc):
        scorer = make_scorer()
        shadow = MomentumEncoder(scorer.encoder)
        shadow.update(scorer.encoder, 0.5)
        state = shadow.state_dict()
        other = MomentumEncoder(make_scorer(seed=9).encoder)
        other.load_state_dict(state)
        torch.testing.assert_close(other.encode(doc), shadow.encode(doc), rtol=0, atol=0)


def random_vec(rng: random.Random, dim: int = 4) -> torch.Tensor:
    return torch.tensor([rng.gauss(0, 1) for _ in range(dim)], dtype=torch.float64)


class TestNegativeQueue:
    def test_fifo_against_reference_deque(self):
        """1000 random enqueue/inspect operations against collections.deque."""
        rng = random.Random(42)
        capacity = rng.randint(3, 17)
        queue = NegativeQueue(capacity)
        reference: collections.deque = collections.deque(maxlen=capacity)
        for _ in range(1000):
            if rng.random() < 0.7:
                batch = [random_vec(rng) for _ in range(rng.randint(1, 4))]
                queue.enqueue(batch)
                reference.extend(v.clone() for v in batch)
            assert len(queue) == len(reference)
            for got, expected in zip(queue.entries, reference):
                assert torch.equal(got, expected)

    def test_eviction_is_oldest_first(self):
        queue = NegativeQueue(2)
        v1, v2, v3 = (torch.tensor([float(i)], dtype=torch.float64) for i in (1, 2, 3))
        queue.enqueue([v1, v2, v3])
        assert [float(v) for v in queue.entries] == [2.0, 3.0]

    def test_entries_are_detached_copies(self):
        queue = NegativeQueue(4)
        v = torch.tensor([1.0], dtype=torch.float64, requires_grad=True)
        queue.enqueue([v])
        stored = queue.entries[0]
        assert not stored.requires_grad
        with torch.no_grad():
            v.fill_(99.0)
        assert float(stored) == 1.0

    def test_dim_mismatch_rejected(self):
        queue = NegativeQueue(4)
        queue.enqueue([torch.zeros(3, dtype=torch.float64) + 1.0])
        with pytest.raises(ValueError):
            queue.enqueue([torch.ones(2, dtype=torch.float64)])

    def test_non_finite_rejected(self):
        queue = NegativeQueue(4)
        with pytest.raises(ValueError):
            queue.enqueue([torch.tensor([float("inf")], dtype=torch.float64)])

    def test_as_matrix_stacks_oldest_first(self):
        queue = NegativeQueue(3)
        queue.enqueue([torch.tensor([float(i), 0.0], dtype=torch.float64) for i in range(3)])
        matrix = queue.as_matrix()
        assert matrix.shape == (3, 2)
        assert [float(row[0]) for row in matrix] == [0.0, 1.0, 2.0]

    def test_state_round_trip(self):
        rng = random.Random(7)
        queue = NegativeQueue(5)
        queue.enqueue([random_vec(rng) for _ in range(8)])
        clone = NegativeQueue.from_state_dict(queue.state_dict())
        assert clone.capacity == queue.capacity
        assert len(clone) == len(queue)
        for a, b in zip(clone.entries, queue.entries):
            assert torch.equal(a, b)


class TestSlicePositive:
    def test_bounds_and_contiguity(self):
        doc = make_doc(n=10)
        rng = random.Random(0)
        for _ in range(300):
            piece = slice_positive(doc, rng, min_sentences=4)
            assert 4 <= piece.n <= 10
            joined = " ".join(piece.sentences)
            assert joined in " ".join(doc.sentences)

    def test_full_length_possible(self):
        doc = make_doc(n=5)
        rng = random.Random(1)
        lengths = {slice_positive(doc, rng).n for _ in range(200)}
        assert lengths == {4, 5}

    def test_minimum_length_document_passes_through(self):
        doc = make_doc(n=4)
        piece = slice_positive(doc, random.Random(0), min_sentences=4)
        assert piece.sentences == doc.sentences

    def test_short_document_rejected(self):
        with pytest.raises(ValueError):
            slice_positive(make_doc(n=3), random.Random(0))

    def test_deterministic_under_seeded_rng(self):
        doc = make_doc(n=9)
        a = [slice_positive(doc, random.Random(5)).id for _ in range(1)]
        b = [slice_positive(doc, random.Random(5)).id for _ in range(1)]
        assert a == b

    def test_token_count_matches_slice(self):
        doc = make_doc(n=8)
        piece = slice_positive(doc, random.Random(3))
        from cohscore.corpus import whitespace_token_count

        assert piece.token_count == sum(whitespace_token_count(s) for s in piece.sentences)
