"""Momentum-averaged encoder copy and the FIFO queue of negative representations.

The momentum encoder is a deep copy of the base encoder whose parameters
follow an exponential moving average p' <- mu * p' + (1 - mu) * p. It is
never touched by backpropagation; it only supplies representations that the
momentum objective treats as constants.
"""

from __future__ import annotations

import copy
import random
from collections import deque
from typing import Iterable

import torch
from torch import nn

from cohscore.corpus import Document


class MomentumEncoder:
    """EMA shadow of a base encoder."""

    def __init__(self, encoder: nn.Module):
        self.encoder = copy.deepcopy(encoder)
        for p in self.encoder.parameters():
            p.requires_grad_(False)
        self.encoder.eval()

    @property
    def dim(self) -> int:
        return self.encoder.dim

    def parameters(self):
        return self.encoder.parameters()

    @torch.no_grad()
    def encode(self, doc: Document) -> torch.Tensor:
        """Constant (detached) representation of ``doc``."""
        return self.encoder(doc).z.detach()

    @torch.no_grad()
    def update(self, base_encoder: nn.Module, coefficient: float) -> None:
        """Move every parameter toward the base encoder: p' <- mu p' + (1-mu) p."""
        if not 0.0 <= coefficient < 1.0:
            raise ValueError("momentum coefficient must be in [0, 1)")
        shadow = dict(self.encoder.named_parameters())
        base = dict(base_encoder.named_parameters())
        if shadow.keys() != base.keys():
            raise RuntimeError("momentum encoder does not mirror the base architecture")
        for name, p_shadow in shadow.items():
            p_base = base[name]
            if p_shadow.shape != p_base.shape:
                raise RuntimeError(f"shape mismatch for {name}")
            p_shadow.mul_(coefficient).add_(p_base, alpha=1.0 - coefficient)

    def state_dict(self) -> dict:
        return self.encoder.state_dict()

    def load_state_dict(self, state: dict) -> None:
        self.encoder.load_state_dict(state)


class NegativeQueue:
    """Fixed-capacity FIFO of detached negative representations."""

    def __init__(self, capacity: int, dim: int | None = None):
        if capacity < 1:
            raise ValueError("queue capacity must be >= 1")
        self.capacity = capacity
        self.dim = dim
        self._entries: deque[torch.Tensor] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def entries(self) -> tuple[torch.Tensor, ...]:
        """Oldest-first view of the current contents."""
        return tuple(self._entries)

    def enqueue(self, representations: Iterable[torch.Tensor]) -> None:
        """Append representations, evicting the oldest beyond capacity."""
        for rep in representations:
            if rep.dim() != 1:
                raise ValueError(f"queue entries must be 1-D, got shape {tuple(rep.shape)}")
            if self.dim is None:
                self.dim = rep.shape[0]
            elif rep.shape[0] != self.dim:
                raise ValueError(f"queue entry dim {rep.shape[0]} != {self.dim}")
            if not torch.isfinite(rep).all():
                raise ValueError("queue entries must be finite")
            self._entries.append(rep.detach().clone())

    def as_matrix(self) -> torch.Tensor:
        if not self._entries:
            raise ValueError("queue is empty")
        return torch.stack(list(self._entries))

    def state_dict(self) -> dict:
        return {
            "capacity": self.capacity,
            "dim": self.dim,
            "entries": [e.clone() for e in self._entries],
        }

    @classmethod
    def from_state_dict(cls, state: dict) -> "NegativeQueue":
        queue = cls(state["capacity"], state["dim"])
        queue.enqueue(state["entries"])
        return queue


def slice_positive(doc: Document, rng: random.Random, min_sentences: int = 4) -> Document:
    """Random contiguous sentence slice of ``doc``.

    The slice length is uniform over [min_sentences, n] and the start
    position uniform over the valid range, so short documents may return
    the whole document.
    """
    if doc.n < min_sentences:
        raise ValueError(f"document {doc.id!r} has n={doc.n} < {min_sentences}")
    length = rng.randint(min_sentences, doc.n)
    start = rng.randint(0, doc.n - length)
    return Document.make(f"{doc.id}#s{start}:{start + length}", doc.sentences[start : start + length])
