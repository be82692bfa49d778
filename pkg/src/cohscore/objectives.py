"""Training objectives for the coherence scorer.

All losses are pure, differentiable functions returning 0-dim tensors.
Python numbers are promoted to float64 tensors so closed-form comparisons
stay exact.
"""

from __future__ import annotations

import torch


def _scalar(x, name: str) -> torch.Tensor:
    x = x if torch.is_tensor(x) else torch.as_tensor(x, dtype=torch.float64)
    if x.dim() != 0:
        raise ValueError(f"{name} must be a scalar, got shape {tuple(x.shape)}")
    if not torch.isfinite(x):
        raise ValueError(f"{name} is not finite")
    return x


def _vector(x, name: str) -> torch.Tensor:
    if torch.is_tensor(x):
        vec = x
    elif isinstance(x, (list, tuple)) and x and torch.is_tensor(x[0]):
        vec = torch.stack(list(x))
    else:
        vec = torch.as_tensor(x, dtype=torch.float64)
    if vec.dim() == 0:
        vec = vec.reshape(1)
    if vec.dim() != 1 or vec.numel() == 0:
        raise ValueError(f"{name} must be a non-empty 1-D sequence")
    if not torch.isfinite(vec).all():
        raise ValueError(f"{name} contains non-finite values")
    return vec


def pairwise_loss(score_pos, score_neg, margin: float = 0.1) -> torch.Tensor:
    """Hinge ranking loss: max(0, margin - score_pos + score_neg)."""
    score_pos = _scalar(score_pos, "score_pos")
    score_neg = _scalar(score_neg, "score_neg")
    zero = torch.zeros((), dtype=score_pos.dtype)
    return torch.maximum(zero, margin - score_pos + score_neg)


def contrastive_loss(score_pos, negative_scores, margin: float = 0.1) -> torch.Tensor:
    """Margin-shifted softmax loss over one positive and N negatives.

    -log( e^{s+} / (e^{s+} + sum_j e^{s-_j - margin}) ), computed via
    log-sum-exp so large scores cannot overflow. Always > 0.
    """
    score_pos = _scalar(score_pos, "score_pos")
    negatives = _vector(negative_scores, "negative_scores")
    logits = torch.cat([score_pos.reshape(1), negatives - margin])
    return torch.logsumexp(logits, dim=0) - score_pos


def cosine(a, b) -> torch.Tensor:
    """Cosine similarity of two 1-D vectors; zero vectors are rejected."""
    a = _vector(a, "a")
    b = _vector(b, "b")
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    norm_a = torch.linalg.vector_norm(a)
    norm_b = torch.linalg.vector_norm(b)
    if norm_a.item() == 0.0 or norm_b.item() == 0.0:
        raise ValueError("cosine undefined for zero vectors")
    return (a @ b) / (norm_a * norm_b)


def momentum_loss(
    positive_rep,
    momentum_positive_rep,
    queue_entries,
    margin: float = 0.1,
) -> torch.Tensor:
    """Softmax loss over cosines against the momentum representation.

    The anchor cosine is cos(z+, z+_m); each queue entry q_j contributes
    cos(z+_m, q_j) - margin. The momentum representation and the queue are
    treated as constants: gradient flows only through the anchor cosine via
    ``positive_rep``.
    """
    z_pos = _vector(positive_rep, "positive_rep")
    z_mom = _vector(momentum_positive_rep, "momentum_positive_rep").detach()
    if isinstance(queue_entries, torch.Tensor) and queue_entries.dim() == 2:
        queue = queue_entries.detach()
    else:
        entries = [e.detach() if torch.is_tensor(e) else torch.as_tensor(e, dtype=torch.float64)
                   for e in queue_entries]
        if not entries:
            raise ValueError("momentum loss needs a non-empty queue")
        queue = torch.stack(entries)
    if queue.numel() == 0:
        raise ValueError("momentum loss needs a non-empty queue")
    if queue.shape[1] != z_mom.shape[0]:
        raise ValueError("queue entry dimension mismatch")
    if not torch.isfinite(queue).all():
        raise ValueError("queue contains non-finite values")
    c_pos = cosine(z_pos, z_mom)
    queue_norms = torch.linalg.vector_norm(queue, dim=1)
    if (queue_norms == 0).any():
        raise ValueError("cosine undefined for zero vectors in the queue")
    c_negs = (queue @ z_mom) / (queue_norms * torch.linalg.vector_norm(z_mom))
    logits = torch.cat([c_pos.reshape(1), c_negs - margin])
    return torch.logsumexp(logits, dim=0) - c_pos


def combined_loss(contrastive, momentum, contrastive_weight: float = 0.85) -> torch.Tensor:
    """Convex combination: weight * contrastive + (1 - weight) * momentum."""
    if not 0.0 <= contrastive_weight <= 1.0:
        raise ValueError("contrastive_weight must be in [0, 1]")
    contrastive = _scalar(contrastive, "contrastive")
    momentum = _scalar(momentum, "momentum")
    return contrastive_weight * contrastive + (1.0 - contrastive_weight) * momentum
