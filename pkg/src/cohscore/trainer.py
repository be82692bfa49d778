"""Training loop for the coherence scorer.

Three regimes share one loop: "pairwise" (hinge on one negative),
"contrastive" (margin softmax over N negatives), and "full" (mined hard
negatives, a momentum encoder, and a FIFO queue feeding the momentum
objective). Batch size 1 is the reference recipe; larger batches accumulate
instance losses per gradient step and change the instances-per-block
accounting.

Every random decision comes from streams owned by the loop, so a checkpoint
restores mid-run training bit-exactly in single-threaded mode.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import torch

from cohscore import evalsuite, miner as mining
from cohscore.momentum import MomentumEncoder, NegativeQueue, slice_positive
from cohscore.objectives import combined_loss, contrastive_loss, momentum_loss, pairwise_loss
from cohscore.scorer import CoherenceScorer
from cohscore.taskgen import EvalPair, TrainingInstance, stream_rng

logger = logging.getLogger(__name__)

REGIMES = ("pairwise", "contrastive", "full")
TRAINER_CHECKPOINT_VERSION = 1


class TrainingDiverged(Exception):
    """Training aborted on a non-finite loss."""


class CheckpointError(Exception):
    """A training checkpoint that cannot be restored."""


@dataclass
class TrainerConfig:
    regime: str = "pairwise"
    margin: float = 0.1
    contrastive_negatives: int = 5
    hard_negative_candidates: int = 50
    mining_block_steps: int = 200
    queue_capacity: int = 1000
    momentum_coefficient: float = 0.9999999
    contrastive_weight: float = 0.85
    learning_rate: float = 5e-6
    final_learning_rate: float = 1e-6
    anneal_steps: int | None = None  # defaults to 1000 for "full", 5000 otherwise
    weight_decay: float = 0.01  # torch AdamW default; not pinned upstream
    grad_clip: float | None = None
    batch_size: int = 1
    max_steps: int = 1000
    eval_every: int = 1000
    seed: int = 0
    freeze_encoder: bool = False
    disable_momentum: bool = False  # ablation: mining without the momentum objective
    slice_min_sentences: int = 4
    num_threads: int | None = 1

    def validate(self) -> None:
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}; expected one of {REGIMES}")
        if self.margin < 0:
            raise ValueError("margin must be >= 0")
        if self.contrastive_negatives < 1:
            raise ValueError("contrastive_negatives must be >= 1")
        if self.hard_negative_candidates < self.contrastive_negatives:
            raise ValueError("hard_negative_candidates must be >= contrastive_negatives")
        if self.mining_block_steps < 1:
            raise ValueError("mining_block_steps must be >= 1")
        if self.queue_capacity < 1:
            raise ValueError("queue_capacity must be >= 1")
        if not 0.0 <= self.momentum_coefficient < 1.0:
            raise ValueError("momentum_coefficient must be in [0, 1)")
        if not 0.0 <= self.contrastive_weight <= 1.0:
            raise ValueError("contrastive_weight must be in [0, 1]")
        if self.learning_rate <= 0 or self.final_learning_rate <= 0:
            raise ValueError("learning rates must be > 0")
        if self.anneal_steps is not None and self.anneal_steps < 1:
            raise ValueError("anneal_steps must be >= 1")
        if self.batch_size < 1 or self.max_steps < 1:
            raise ValueError("batch_size and max_steps must be >= 1")
        if self.eval_every < 0:
            raise ValueError("eval_every must be >= 0")
        if self.disable_momentum and self.regime != "full":
            raise ValueError("disable_momentum only applies to the full regime")
        if self.batch_size > 1:
            logger.warning(
                "batch_size=%d departs from the reference recipe (batch size 1)",
                self.batch_size,
            )

    def resolved_anneal_steps(self) -> int:
        if self.anneal_steps is not None:
            return self.anneal_steps
        return 1000 if self.regime == "full" else 5000

    @property
    def label(self) -> str:
        if self.regime == "full" and self.disable_momentum:
            return "full/no-momentum"
        return self.regime


@dataclass
class StepRecord:
    step: int
    loss: float
    loss_contrastive: float | None
    loss_momentum: float | None
    momentum_weight: float | None
    lr: float


@dataclass
class EvalRecord:
    step: int
    accuracy: float
    pair_count: int
    score_ties: int


@dataclass
class TrainLog:
    regime: str
    label: str
    steps: list[StepRecord] = field(default_factory=list)
    evals: list[EvalRecord] = field(default_factory=list)
    wall_clock_seconds: float = 0.0

    def to_records(self) -> list[dict]:
        records = [{"type": "meta", "regime": self.regime, "label": self.label}]
        records += [{"type": "step", **asdict(s)} for s in self.steps]
        records += [{"type": "eval", **asdict(e)} for e in self.evals]
        return records

    @classmethod
    def from_records(cls, records: Sequence[dict]) -> "TrainLog":
        log = cls(regime="pairwise", label="pairwise")
        for record in records:
            kind = record.get("type")
            body = {k: v for k, v in record.items() if k != "type"}
            if kind == "meta":
                log.regime, log.label = body["regime"], body["label"]
            elif kind == "step":
                log.steps.append(StepRecord(**body))
            elif kind == "eval":
                log.evals.append(EvalRecord(**body))
            elif kind == "timing":
                log.wall_clock_seconds = body["wall_clock_seconds"]
            else:
                raise ValueError(f"unknown record type {kind!r}")
        return log

    def save_jsonl(self, path: str | Path) -> None:
        """One JSON record per line; wall-clock goes last so the rest is deterministic."""
        records = self.to_records()
        records.append({"type": "timing", "wall_clock_seconds": self.wall_clock_seconds})
        lines = [json.dumps(r, sort_keys=True) for r in records]
        Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def load_train_log(path: str | Path) -> TrainLog:
    records = [
        json.loads(line)
        for line in Path(path).read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]
    return TrainLog.from_records(records)


def make_optimizer_and_schedule(config: TrainerConfig, parameters):
    """AdamW plus a linear learning-rate anneal to the floor, then constant."""
    parameters = list(parameters)
    if not parameters:
        raise ValueError("no trainable parameters")
    optimizer = torch.optim.AdamW(
        parameters, lr=config.learning_rate, weight_decay=config.weight_decay
    )
    anneal = config.resolved_anneal_steps()
    lr0, lr1 = config.learning_rate, config.final_learning_rate

    def factor(step: int) -> float:
        t = min(step, anneal)
        return (lr0 + (lr1 - lr0) * (t / anneal)) / lr0

    scheduler = torch.optim.lr_scheduler.LambdaLR(optimizer, factor)
    return optimizer, scheduler


def _build_schedule(num_instances: int, positions: int, rng) -> list[int]:
    """Instance-visiting order: concatenated per-epoch shuffles, truncated."""
    schedule: list[int] = []
    while len(schedule) < positions:
        epoch = list(range(num_instances))
        rng.shuffle(epoch)
        schedule.extend(epoch)
    return schedule[:positions]


def dataset_fingerprint(instances: Sequence[TrainingInstance]) -> str:
    digest = hashlib.sha256()
    for instance in instances:
        digest.update(json.dumps(instance.to_json(), sort_keys=True).encode("utf-8"))
    return f"sha256:{digest.hexdigest()}"


def _validate_shapes(config: TrainerConfig, instances: Sequence[TrainingInstance]) -> None:
    if not instances:
        raise ValueError("empty training dataset")
    minimum = {
        "pairwise": 1,
        "contrastive": config.contrastive_negatives,
        "full": config.hard_negative_candidates,
    }[config.regime]
    for instance in instances:
        if instance.num_negatives < minimum:
            raise ValueError(
                f"instance {instance.positive.id}#{instance.repetition_index} has "
                f"{instance.num_negatives} negatives; regime {config.regime!r} needs >= {minimum}"
            )


@dataclass
class StepLosses:
    total: torch.Tensor
    contrastive: float | None = None
    momentum: float | None = None
    momentum_weight: float | None = None
    pending_queue_reps: list[torch.Tensor] = field(default_factory=list)


class TrainingLoop:
    """Mutable training state; ``train`` drives it, checkpoints serialize it."""

    def __init__(
        self,
        config: TrainerConfig,
        scorer: CoherenceScorer,
        instances: Sequence[TrainingInstance],
        dev_pairs: Sequence[EvalPair] = (),
        checkpoint_dir: str | Path | None = None,
    ):
        config.validate()
        _validate_shapes(config, instances)
        if config.num_threads:
            torch.set_num_threads(config.num_threads)
        self.config = config
        self.scorer = scorer
        self.instances = list(instances)
        self.dev_pairs = list(dev_pairs)
        self.checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else None
        self.fingerprint = dataset_fingerprint(self.instances)

        if config.freeze_encoder:
            for p in self.scorer.encoder.parameters():
                p.requires_grad_(False)
        trainable = [p for p in self.scorer.parameters() if p.requires_grad]
        self.optimizer, self.scheduler = make_optimizer_and_schedule(config, trainable)

        positions = config.max_steps * config.batch_size
        if config.regime == "full":
            # plan whole mining blocks even when max_steps stops mid-block, so
            # resuming with a larger max_steps reuses identical selections
            width = config.mining_block_steps * config.batch_size
            positions = ((positions + width - 1) // width) * width
        self.schedule = _build_schedule(
            len(self.instances),
            positions,
            stream_rng(config.seed, "order"),
        )
        self.step = 0
        self.best_dev_accuracy: float | None = None
        self.log = TrainLog(regime=config.regime, label=config.label)

        self.momentum_encoder: MomentumEncoder | None = None
        self.queue: NegativeQueue | None = None
        self.slice_rng = stream_rng(config.seed, "slice")
        self.miner_state: mining.MiningState | None = None
        if config.regime == "full":
            if not config.disable_momentum:
                self.momentum_encoder = MomentumEncoder(self.scorer.encoder)
                self.queue = NegativeQueue(config.queue_capacity)
            self.miner_state = mining.init_block_random(
                self._block_instances(0),
                config.contrastive_negatives,
                stream_rng(config.seed, "miner"),
                candidate_limit=config.hard_negative_candidates,
            )

    # -- mining block bookkeeping ------------------------------------------

    def _block_positions(self, block: int) -> range:
        width = self.config.mining_block_steps * self.config.batch_size
        start = block * width
        return range(start, min(start + width, len(self.schedule)))

    def _block_instances(self, block: int) -> list[TrainingInstance]:
        return [self.instances[self.schedule[p]] for p in self._block_positions(block)]

    # -- per-instance losses -----------------------------------------------

    def _instance_loss(self, instance: TrainingInstance, position: int) -> StepLosses:
        config = self.config
        margin = config.margin
        if config.regime == "pairwise":
            s_pos = self.scorer.score(instance.positive)
            s_neg = self.scorer.score(instance.negative(0))
            return StepLosses(total=pairwise_loss(s_pos, s_neg, margin))

        if config.regime == "contrastive":
            s_pos = self.scorer.score(instance.positive)
            s_negs = torch.stack(
                [self.scorer.score(instance.negative(i))
                 for i in range(config.contrastive_negatives)]
            )
            loss = contrastive_loss(s_pos, s_negs, margin)
            return StepLosses(total=loss, contrastive=float(loss.detach()))

        # full regime: mined negatives, momentum objective over the queue
        offset = position - self._block_positions(self.miner_state.block_index).start
        selection = self.miner_state.selections[offset]
        if selection is None:
            raise ValueError("mined selection missing; dataset shape was pre-validated")
        negatives = [instance.negative(i) for i in selection]
        z_pos = self.scorer.encode(instance.positive).z
        s_pos = self.scorer.score_from_z(z_pos)
        s_negs = torch.stack([self.scorer.score(n) for n in negatives])
        l_con = contrastive_loss(s_pos, s_negs, margin)
        if self.momentum_encoder is None:
            return StepLosses(total=l_con, contrastive=float(l_con.detach()))

        slice_doc = slice_positive(
            instance.positive, self.slice_rng, self.config.slice_min_sentences
        )
        z_mom = self.momentum_encoder.encode(slice_doc)
        pending = [self.momentum_encoder.encode(n) for n in negatives]
        if len(self.queue) == 0:
            # queue warm-up: skip the momentum term, renormalize its weight away
            return StepLosses(
                total=l_con,
                contrastive=float(l_con.detach()),
                momentum=None,
                momentum_weight=0.0,
                pending_queue_reps=pending,
            )
        l_mom = momentum_loss(z_pos, z_mom, self.queue.as_matrix(), margin)
        total = combined_loss(l_con, l_mom, config.contrastive_weight)
        return StepLosses(
            total=total,
            contrastive=float(l_con.detach()),
            momentum=float(l_mom.detach()),
            momentum_weight=1.0 - config.contrastive_weight,
            pending_queue_reps=pending,
        )

    # -- stepping ------------------------------------------------------------

    def compute_step_losses(self) -> list[StepLosses]:
        start = self.step * self.config.batch_size
        positions = range(start, start + self.config.batch_size)
        return [
            self._instance_loss(self.instances[self.schedule[p]], p) for p in positions
        ]

    def step_once(self) -> StepRecord:
        if self.step >= self.config.max_steps:
            raise RuntimeError("training already finished")
        lr = self.scheduler.get_last_lr()[0]
        try:
            losses = self.compute_step_losses()
            total = torch.stack([l.total for l in losses]).mean()
            if not torch.isfinite(total):
                raise ValueError("non-finite loss")
        except ValueError as exc:
            self._diagnostic_checkpoint()
            raise TrainingDiverged(f"step {self.step + 1}: {exc}") from exc
        self.optimizer.zero_grad()
        total.backward()
        if self.config.grad_clip is not None:
            torch.nn.utils.clip_grad_norm_(
                [p for p in self.scorer.parameters() if p.requires_grad],
                self.config.grad_clip,
            )
        self.optimizer.step()
        self.scheduler.step()
        if self.momentum_encoder is not None:
            self.momentum_encoder.update(self.scorer.encoder, self.config.momentum_coefficient)
            for item in losses:
                self.queue.enqueue(item.pending_queue_reps)
        self.step += 1

        def mean_or_none(values: list[float | None]) -> float | None:
            present = [v for v in values if v is not None]
            return sum(present) / len(present) if present else None

        record = StepRecord(
            step=self.step,
            loss=float(total.detach()),
            loss_contrastive=mean_or_none([l.contrastive for l in losses]),
            loss_momentum=mean_or_none([l.momentum for l in losses]),
            momentum_weight=mean_or_none([l.momentum_weight for l in losses]),
            lr=lr,
        )
        self.log.steps.append(record)

        if (
            self.config.regime == "full"
            and self.step % self.config.mining_block_steps == 0
            and self.step < self.config.max_steps
        ):
            block = self.step // self.config.mining_block_steps
            self.miner_state = mining.advance(
                self.miner_state,
                self.scorer,
                self._block_instances(block),
                self.config.contrastive_negatives,
                candidate_limit=self.config.hard_negative_candidates,
            )
        if (
            self.dev_pairs
            and self.config.eval_every > 0
            and self.step % self.config.eval_every == 0
        ):
            self.evaluate_dev()
        return record

    def evaluate_dev(self) -> EvalRecord:
        report = evalsuite.pairwise_accuracy(self.scorer, self.dev_pairs, dataset="dev")
        record = EvalRecord(
            step=self.step,
            accuracy=report.value,
            pair_count=report.pair_count,
            score_ties=report.tie_count,
        )
        self.log.evals.append(record)
        logger.info("eval | step=%d accuracy=%.4f", record.step, record.accuracy)
        if self.best_dev_accuracy is None or record.accuracy > self.best_dev_accuracy:
            self.best_dev_accuracy = record.accuracy
            if self.checkpoint_dir is not None:
                checkpoint_save(self, self.checkpoint_dir / "best")
        return record

    def run(self) -> None:
        start = time.perf_counter()
        while self.step < self.config.max_steps:
            self.step_once()
        self.log.wall_clock_seconds += time.perf_counter() - start

    def _diagnostic_checkpoint(self) -> None:
        if self.checkpoint_dir is not None:
            path = self.checkpoint_dir / "diagnostic"
            checkpoint_save(self, path)
            logger.error("diagnostic checkpoint written to %s", path)


def checkpoint_save(loop: TrainingLoop, path: str | Path) -> None:
    """Serialize the full training state to a directory."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    loop.scorer.save(path / "scorer")
    state = {
        "format_version": TRAINER_CHECKPOINT_VERSION,
        "config": asdict(loop.config),
        "step": loop.step,
        "optimizer": loop.optimizer.state_dict(),
        "scheduler": loop.scheduler.state_dict(),
        "slice_rng": loop.slice_rng.getstate(),
        "torch_rng": torch.get_rng_state(),
        "queue": loop.queue.state_dict() if loop.queue is not None else None,
        "momentum_encoder": (
            loop.momentum_encoder.state_dict() if loop.momentum_encoder is not None else None
        ),
        "miner_state": loop.miner_state.to_json() if loop.miner_state is not None else None,
        "dataset_fingerprint": loop.fingerprint,
        "best_dev_accuracy": loop.best_dev_accuracy,
        "log": loop.log.to_records(),
        "wall_clock_seconds": loop.log.wall_clock_seconds,
    }
    torch.save(state, path / "training_state.pt")


def checkpoint_load(
    path: str | Path,
    instances: Sequence[TrainingInstance],
    dev_pairs: Sequence[EvalPair] = (),
    config: TrainerConfig | None = None,
    checkpoint_dir: str | Path | None = None,
) -> TrainingLoop:
    """Rebuild a TrainingLoop from a checkpoint directory.

    The dataset must be the one the checkpoint was trained on; ``config``
    may only differ in ``max_steps`` (to continue training further).
    """
    path = Path(path)
    try:
        state = torch.load(path / "training_state.pt", map_location="cpu", weights_only=False)
    except FileNotFoundError as exc:
        raise CheckpointError(f"no training state under {path}") from exc
    if state.get("format_version") != TRAINER_CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint format {state.get('format_version')!r} unsupported; "
            f"expected {TRAINER_CHECKPOINT_VERSION}"
        )
    saved_config = TrainerConfig(**state["config"])
    if config is None:
        config = saved_config
    else:
        ours = {k: v for k, v in asdict(config).items() if k != "max_steps"}
        theirs = {k: v for k, v in asdict(saved_config).items() if k != "max_steps"}
        if ours != theirs:
            diff = sorted(k for k in ours if ours[k] != theirs[k])
            raise CheckpointError(f"config mismatch on resume: {diff}")
    scorer = CoherenceScorer.load(path / "scorer")
    loop = TrainingLoop(config, scorer, instances, dev_pairs, checkpoint_dir=checkpoint_dir)
    if loop.fingerprint != state["dataset_fingerprint"]:
        raise CheckpointError("dataset does not match the one in the checkpoint")
    loop.step = state["step"]
    loop.optimizer.load_state_dict(state["optimizer"])
    loop.scheduler.load_state_dict(state["scheduler"])
    loop.slice_rng.setstate(state["slice_rng"])
    torch.set_rng_state(state["torch_rng"])
    if state["queue"] is not None:
        loop.queue = NegativeQueue.from_state_dict(state["queue"])
    if state["momentum_encoder"] is not None:
        loop.momentum_encoder.load_state_dict(state["momentum_encoder"])
    if state["miner_state"] is not None:
        loop.miner_state = mining.MiningState.from_json(state["miner_state"])
    loop.best_dev_accuracy = state["best_dev_accuracy"]
    loop.log = TrainLog.from_records(state["log"])
    loop.log.wall_clock_seconds = state.get("wall_clock_seconds", 0.0)
    return loop


def train(
    config: TrainerConfig,
    scorer: CoherenceScorer | None,
    instances: Sequence[TrainingInstance],
    dev_pairs: Sequence[EvalPair] = (),
    checkpoint_dir: str | Path | None = None,
    log_path: str | Path | None = None,
    resume_from: str | Path | None = None,
) -> tuple[CoherenceScorer, TrainLog]:
    """Train ``scorer`` on ``instances``; returns the model and its log.

    With ``checkpoint_dir``, the best-on-dev and final states are saved under
    ``best/`` and ``last/``. ``resume_from`` restores a previous checkpoint
    (the passed scorer is ignored) and continues to ``config.max_steps``.
    """
    if resume_from is not None:
        loop = checkpoint_load(
            resume_from, instances, dev_pairs, config=config, checkpoint_dir=checkpoint_dir
        )
    else:
        if scorer is None:
            raise ValueError("scorer is required unless resuming")
        loop = TrainingLoop(config, scorer, instances, dev_pairs, checkpoint_dir=checkpoint_dir)
    loop.run()
    if checkpoint_dir is not None:
        checkpoint_save(loop, Path(checkpoint_dir) / "last")
    if log_path is not None:
        loop.log.save_jsonl(log_path)
    return loop.scorer, loop.log


@torch.no_grad()
def average_parameters(scorers: Sequence[CoherenceScorer]) -> CoherenceScorer:
    """Equal-weight parameter average of same-architecture scorers.

    Optional post-anneal smoothing: average the checkpoints saved after the
    learning rate reaches its floor.
    """
    if not scorers:
        raise ValueError("nothing to average")
    import copy

    averaged = copy.deepcopy(scorers[0])
    states = [s.state_dict() for s in scorers]
    merged = {}
    for key in states[0]:
        merged[key] = torch.stack([state[key].to(torch.float64) for state in states]).mean(0)
    target_state = averaged.state_dict()
    averaged.load_state_dict(
        {k: v.to(target_state[k].dtype) for k, v in merged.items()}
    )
    return averaged
