"""Local hard-negative mining over blocks of training instances.

Training proceeds block by block. The first block trains on randomly chosen
negatives; at every block boundary the current model scores the next block's
candidate negatives and keeps the top scorers (the hardest, since negatives
should score low). Selection for block i+1 happens only after block i has
finished training.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from typing import Sequence

from cohscore.taskgen import TrainingInstance

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MinerConfig:
    candidates_per_instance: int = 50
    selected_per_instance: int = 5
    block_steps: int = 200

    def __post_init__(self) -> None:
        if self.selected_per_instance < 1:
            raise ValueError("selected_per_instance must be >= 1")
        if self.candidates_per_instance < self.selected_per_instance:
            raise ValueError("candidates_per_instance must be >= selected_per_instance")
        if self.block_steps < 1:
            raise ValueError("block_steps must be >= 1")


@dataclass
class MiningState:
    """Selections for the upcoming block, aligned with its instance positions."""

    block_index: int
    selections: list[list[int] | None] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"block_index": self.block_index, "selections": self.selections}

    @classmethod
    def from_json(cls, record: dict) -> "MiningState":
        return cls(
            int(record["block_index"]),
            [None if s is None else [int(i) for i in s] for s in record["selections"]],
        )


def _pool_size(instance: TrainingInstance, candidate_limit: int | None) -> int:
    if candidate_limit is None:
        return instance.num_negatives
    return min(instance.num_negatives, candidate_limit)


def init_block_random(
    instances: Sequence[TrainingInstance],
    selected_per_instance: int,
    rng: random.Random,
    candidate_limit: int | None = None,
) -> MiningState:
    """Random selections for block 0; instances with too few negatives are dropped."""
    selections: list[list[int] | None] = []
    for instance in instances:
        pool = _pool_size(instance, candidate_limit)
        if pool < selected_per_instance:
            logger.warning(
                "instance %s#%d has %d < %d negatives; dropped from block 0",
                instance.positive.id,
                instance.repetition_index,
                pool,
                selected_per_instance,
            )
            selections.append(None)
            continue
        selections.append(sorted(rng.sample(range(pool), selected_per_instance)))
    return MiningState(block_index=0, selections=selections)


def rank_and_select(
    scorer,
    instance: TrainingInstance,
    selected_per_instance: int,
    candidate_limit: int | None = None,
) -> list[int]:
    """Indices of the top-scoring candidate negatives, ties by lower index."""
    pool = _pool_size(instance, candidate_limit)
    if pool < selected_per_instance:
        raise ValueError(
            f"instance has {pool} candidate negatives, need >= {selected_per_instance}"
        )
    scores = scorer.score_documents(instance.negative(i) for i in range(pool))
    ranked = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    return ranked[:selected_per_instance]


def advance(
    state: MiningState,
    scorer,
    next_block: Sequence[TrainingInstance],
    selected_per_instance: int,
    candidate_limit: int | None = None,
) -> MiningState:
    """Score the next block's candidates with the current model and select."""
    selections = [
        rank_and_select(scorer, inst, selected_per_instance, candidate_limit)
        for inst in next_block
    ]
    return MiningState(block_index=state.block_index + 1, selections=selections)
