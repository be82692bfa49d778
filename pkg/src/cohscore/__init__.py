"""Self-supervised text coherence scoring toolkit.

Builds training data from permuted and intruded documents, scores documents
with a pluggable encoder plus linear head, and trains that scorer with
pairwise, contrastive, or momentum-queue objectives.
"""

__version__ = "0.1.0"

from cohscore.corpus import Corpus, Document, load_corpus, partition_blocks, preprocess
from cohscore.scorer import CoherenceScorer, make_backbone
from cohscore.taskgen import (
    EvalPair,
    TrainingInstance,
    build_intrusion_dataset,
    build_mining_dataset,
    build_permuted_dataset,
    sample_permutations,
)
from cohscore.trainer import TrainerConfig, TrainLog, train

__all__ = [
    "__version__",
    "Corpus",
    "Document",
    "load_corpus",
    "partition_blocks",
    "preprocess",
    "CoherenceScorer",
    "make_backbone",
    "EvalPair",
    "TrainingInstance",
    "build_intrusion_dataset",
    "build_mining_dataset",
    "build_permuted_dataset",
    "sample_permutations",
    "TrainerConfig",
    "TrainLog",
    "train",
]
