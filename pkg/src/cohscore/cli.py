"""Command-line interface.

Subcommands: generate (build training data), train, evaluate, score, and
sweep (grid of training runs in child processes). Every invocation writes a
run manifest with resolved configuration, input hashes, and output paths;
manifests carry no timestamps, so re-running a command reproduces its
outputs byte for byte.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 training
divergence.
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import os
import subprocess
import sys
from dataclasses import asdict, fields
from pathlib import Path

from cohscore import __version__, analysis, evalsuite
from cohscore.corpus import Corpus, CorpusFormatError, load_corpus, prepare_corpus, save_corpus
from cohscore.scorer import CoherenceScorer, TinyEncoderConfig, make_backbone
from cohscore.synthetic import make_synthetic_corpus
from cohscore.taskgen import (
    EvalPair,
    EvalPairFormatError,
    PermutationPoolExhausted,
    build_intrusion_dataset,
    build_permuted_dataset,
    load_eval_pairs,
    load_instances,
    sample_permutations,
    save_eval_pairs,
    save_instances,
    stream_rng,
)
from cohscore.trainer import (
    CheckpointError,
    TrainerConfig,
    TrainingDiverged,
    train,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DIVERGED = 3

_BACKBONE_PREFIX = "backbone_"


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the contract here is exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def write_manifest(
    out_dir: Path,
    command: str,
    config: dict,
    seed: int | None,
    inputs: list[Path],
    outputs: list[Path],
) -> Path:
    """Record what ran: resolved config, input hashes, outputs, version."""
    manifest = {
        "command": command,
        "argv": sys.argv[1:],
        "config": config,
        "seed": seed,
        "input_hashes": {str(p): evalsuite.sha256_file(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
        "version": __version__,
    }
    path = out_dir / "run_manifest.json"
    _write_atomic(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _parse_override(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise ValueError(f"--set expects key=value, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def load_config_dict(path: str | None, overrides: list[str] | None) -> dict:
    """Flat key-value config file plus --set overrides (overrides win)."""
    config: dict = {}
    if path:
        loaded = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(loaded, dict):
            raise ValueError(f"config file {path} must hold a flat JSON object")
        config.update(loaded)
    for item in overrides or []:
        key, value = _parse_override(item)
        config[key] = value
    return config


def split_config(config: dict) -> tuple[dict, dict, int]:
    """Split a flat config into trainer kwargs, backbone kwargs, head seed."""
    trainer_keys = {f.name for f in fields(TrainerConfig)}
    trainer: dict = {}
    backbone: dict = {"kind": "tiny"}
    head_seed = 0
    for key, value in config.items():
        if key == "head_seed":
            head_seed = int(value)
        elif key == "backbone":
            backbone["kind"] = value
        elif key.startswith(_BACKBONE_PREFIX):
            backbone[key[len(_BACKBONE_PREFIX) :]] = value
        elif key in trainer_keys:
            trainer[key] = value
        else:
            raise ValueError(f"unknown config key {key!r}")
    return trainer, backbone, head_seed


def build_scorer(backbone_config: dict, head_seed: int) -> CoherenceScorer:
    backbone_config = dict(backbone_config)
    kind = backbone_config.pop("kind", "tiny")
    return CoherenceScorer(make_backbone(kind, backbone_config), head_seed=head_seed)


def load_scorer_checkpoint(path: str | Path) -> CoherenceScorer:
    """Accept a scorer directory or a trainer checkpoint layout around one."""
    path = Path(path)
    candidates = [
        path,
        path / "scorer",
        path / "checkpoints" / "best" / "scorer",
        path / "checkpoints" / "last" / "scorer",
    ]
    for candidate in candidates:
        if (candidate / "meta.json").exists():
            return CoherenceScorer.load(candidate)
    raise CheckpointError(f"no scorer checkpoint found under {path}")


# -- generate ----------------------------------------------------------------


def cmd_generate(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    inputs: list[Path] = []
    if args.synthetic:
        corpus = make_synthetic_corpus(args.synthetic, seed=args.seed)
    else:
        if not args.corpus:
            raise ValueError("either --corpus or --synthetic is required")
        corpus = load_corpus(args.corpus)
        inputs.append(Path(args.corpus))
    prepared = prepare_corpus(
        corpus,
        min_sentences=args.min_sentences,
        max_tokens=args.max_tokens,
        block_threshold=args.block_threshold,
        block_size=args.block_size,
    )
    if len(prepared) == 0:
        raise ValueError("no documents survived preprocessing")
    holdout = args.holdout_docs
    if holdout >= len(prepared):
        raise ValueError(f"--holdout-docs {holdout} >= corpus size {len(prepared)}")
    train_docs = Corpus(prepared.documents[: len(prepared) - holdout])
    held_docs = Corpus(prepared.documents[len(prepared) - holdout :], split="holdout") if holdout else None

    if args.task == "permuted":
        instances = build_permuted_dataset(
            train_docs, args.repetitions, args.negatives, seed=args.seed
        )
    else:
        instances = build_intrusion_dataset(train_docs, similarity=args.similarity, seed=args.seed)
    if not instances:
        raise ValueError("task generation produced no instances")

    outputs = []
    corpus_path = out_dir / "corpus.jsonl"
    save_corpus(train_docs, corpus_path)
    outputs.append(corpus_path)
    instances_path = out_dir / "instances.jsonl"
    save_instances(instances, instances_path)
    outputs.append(instances_path)

    if held_docs is not None:
        held_path = out_dir / "holdout_corpus.jsonl"
        save_corpus(held_docs, held_path)
        outputs.append(held_path)
        pairs = _holdout_pairs(held_docs, args)
        pairs_path = out_dir / "dev_pairs.jsonl"
        save_eval_pairs(pairs, pairs_path)
        outputs.append(pairs_path)

    config = {
        "task": args.task,
        "repetitions": args.repetitions,
        "negatives": args.negatives,
        "similarity": args.similarity,
        "synthetic": args.synthetic,
        "min_sentences": args.min_sentences,
        "max_tokens": args.max_tokens,
        "block_threshold": args.block_threshold,
        "block_size": args.block_size,
        "holdout_docs": args.holdout_docs,
        "holdout_pairs_per_doc": args.holdout_pairs_per_doc,
    }
    outputs.append(write_manifest(out_dir, "generate", config, args.seed, inputs, outputs))
    logger.info("generate | instances=%d out=%s", len(instances), out_dir)
    return EXIT_OK


def _holdout_pairs(held_docs: Corpus, args) -> list[EvalPair]:
    pairs: list[EvalPair] = []
    if args.task == "permuted":
        for doc in held_docs:
            rng = stream_rng(args.seed, doc.id, "holdout")
            orders = sample_permutations(doc, args.holdout_pairs_per_doc, rng=rng)
            for j, order in enumerate(orders):
                negative = doc.__class__(
                    f"{doc.id}#h{j}",
                    tuple(doc.sentences[i] for i in order),
                    doc.token_count,
                )
                pairs.append(EvalPair(f"{doc.id}#h{j}", doc, negative))
    else:
        for instance in build_intrusion_dataset(held_docs, similarity=args.similarity, seed=args.seed):
            pairs.append(
                EvalPair(f"{instance.positive.id}#h0", instance.positive, instance.negative(0))
            )
    return pairs


# -- train -------------------------------------------------------------------


def cmd_train(args) -> int:
    config_dict = load_config_dict(args.config, args.set)
    if args.regime:
        config_dict["regime"] = args.regime
    if args.max_steps is not None:
        config_dict["max_steps"] = args.max_steps
    if args.seed is not None:
        config_dict["seed"] = args.seed
    if "seed" not in config_dict:
        raise ValueError("a seed is required: pass --seed or put 'seed' in the config")
    trainer_kwargs, backbone_config, head_seed = split_config(config_dict)
    config = TrainerConfig(**trainer_kwargs)
    config.validate()

    corpus = load_corpus(args.corpus)
    instances = load_instances(args.instances, corpus)
    dev_pairs = load_eval_pairs(args.dev_pairs) if args.dev_pairs else []
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    scorer = None if args.resume else build_scorer(backbone_config, head_seed)
    _, log = train(
        config,
        scorer,
        instances,
        dev_pairs,
        checkpoint_dir=out_dir / "checkpoints",
        log_path=out_dir / "trainlog.jsonl",
        resume_from=args.resume,
    )
    inputs = [Path(args.corpus), Path(args.instances)]
    if args.dev_pairs:
        inputs.append(Path(args.dev_pairs))
    resolved = dict(config_dict)
    resolved.update(asdict(config))
    outputs = [out_dir / "trainlog.jsonl", out_dir / "checkpoints" / "last"]
    write_manifest(out_dir, "train", resolved, config.seed, inputs, outputs)
    final_eval = log.evals[-1].accuracy if log.evals else None
    logger.info(
        "train | steps=%d final_loss=%.6f dev=%s",
        len(log.steps),
        log.steps[-1].loss if log.steps else float("nan"),
        f"{final_eval:.4f}" if final_eval is not None else "n/a",
    )
    return EXIT_OK


# -- evaluate ------------------------------------------------------------------


def cmd_evaluate(args) -> int:
    scorer = load_scorer_checkpoint(args.checkpoint)
    pairs = load_eval_pairs(args.pairs, schema=args.schema)
    provenance = {
        "checkpoint": str(args.checkpoint),
        "pairs": evalsuite.sha256_file(args.pairs),
    }
    dataset = args.dataset or Path(args.pairs).stem
    if args.schema == "judgments":
        report = evalsuite.model_agreement(
            scorer, pairs, dataset=dataset, mode=args.agreement_mode, provenance=provenance
        )
    elif args.schema == "probes":
        report = evalsuite.probe_accuracy(scorer, pairs, dataset=dataset, provenance=provenance)
    else:
        report = evalsuite.pairwise_accuracy(
            scorer,
            pairs,
            dataset=dataset,
            include_rating_ties=args.keep_ties,
            provenance=provenance,
        )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / "report.json"
    _write_atomic(json_path, json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n")
    text_path = out_dir / "report.txt"
    _write_atomic(text_path, report.to_text())
    config = {
        "schema": args.schema,
        "keep_ties": args.keep_ties,
        "agreement_mode": args.agreement_mode,
    }
    write_manifest(
        out_dir, "evaluate", config, None, [Path(args.pairs)], [json_path, text_path]
    )
    value = "undefined" if report.value is None else f"{report.value:.4f}"
    logger.info("evaluate | metric=%s value=%s pairs=%d", report.metric, value, report.pair_count)
    print(report.to_text(), end="")
    return EXIT_OK


# -- score ---------------------------------------------------------------------


def cmd_score(args) -> int:
    scorer = load_scorer_checkpoint(args.checkpoint)
    corpus = load_corpus(args.docs)
    if len(corpus) == 0:
        raise ValueError("no documents to score")
    lines = []
    for doc in corpus:
        lines.append(json.dumps({"id": doc.id, "score": scorer.score_document(doc)}, sort_keys=True))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    scores_path = out_dir / "scores.jsonl"
    _write_atomic(scores_path, "".join(line + "\n" for line in lines))
    write_manifest(
        out_dir,
        "score",
        {"checkpoint": str(args.checkpoint)},
        None,
        [Path(args.docs)],
        [scores_path],
    )
    logger.info("score | documents=%d out=%s", len(corpus), scores_path)
    return EXIT_OK


# -- sweep ---------------------------------------------------------------------


def cmd_sweep(args) -> int:
    grid = json.loads(Path(args.grid).read_text(encoding="utf-8"))
    if not isinstance(grid, dict) or not grid:
        raise ValueError("grid file must map parameter names to value lists")
    trainer_keys = {f.name for f in fields(TrainerConfig)}
    for key, values in grid.items():
        if key not in trainer_keys:
            raise ValueError(f"grid parameter {key!r} is not a trainer config field")
        if not isinstance(values, list) or not values:
            raise ValueError(f"grid parameter {key!r} needs a non-empty value list")
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    if not seeds:
        raise ValueError("--seeds must list at least one seed")
    base_config = load_config_dict(args.config, args.set)
    test_pairs = load_eval_pairs(args.test_pairs)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    names = sorted(grid)
    points = [dict(zip(names, combo)) for combo in itertools.product(*(grid[n] for n in names))]
    rows = []
    child_manifests = []
    for point in points:
        label = ",".join(f"{k}={point[k]}" for k in names).replace("/", "_")
        accuracies = []
        failures = 0
        for seed in seeds:
            run_dir = out_dir / "runs" / label / f"seed{seed}"
            run_dir.mkdir(parents=True, exist_ok=True)
            child_config = dict(base_config)
            child_config.update(point)
            child_config["seed"] = seed
            config_path = run_dir / "config.json"
            _write_atomic(config_path, json.dumps(child_config, indent=2, sort_keys=True) + "\n")
            command = [
                sys.executable,
                "-m",
                "cohscore",
                "train",
                "--config",
                str(config_path),
                "--corpus",
                args.corpus,
                "--instances",
                args.instances,
                "--out",
                str(run_dir),
            ]
            if args.dev_pairs:
                command += ["--dev-pairs", args.dev_pairs]
            result = subprocess.run(command, capture_output=True, text=True)
            if result.returncode != 0:
                failures += 1
                logger.warning(
                    "sweep child failed | point=%s seed=%d code=%d stderr=%s",
                    label,
                    seed,
                    result.returncode,
                    result.stderr.strip()[-500:],
                )
                continue
            child_manifests.append(str(run_dir / "run_manifest.json"))
            scorer = load_scorer_checkpoint(run_dir)
            report = evalsuite.pairwise_accuracy(scorer, test_pairs, dataset="test")
            accuracies.append(report.value)
        for name in names:
            rows.append(
                {
                    "parameter": name,
                    "value": point[name],
                    "dataset": "test",
                    "mean": _mean(accuracies),
                    "std": _std(accuracies),
                    "seeds": len(accuracies),
                    "failed_seeds": failures,
                    "complete": failures == 0,
                    "point": label,
                }
            )
    report_path = out_dir / "sweep_report.json"
    _write_atomic(report_path, json.dumps(rows, indent=2, sort_keys=True) + "\n")
    outputs = [report_path]
    if len(grid) == 1:
        parameter = names[0]
        complete = [r for r in rows if r["seeds"] > 0]
        if complete:
            analysis.sweep_curves(complete, parameter, out_dir)
            outputs.append(out_dir / f"sweep_{parameter}.csv")
    config = {"grid": grid, "seeds": seeds, "base_config": base_config, "children": child_manifests}
    inputs = [Path(args.corpus), Path(args.instances), Path(args.test_pairs)]
    if args.dev_pairs:
        inputs.append(Path(args.dev_pairs))
    write_manifest(out_dir, "sweep", config, None, inputs, outputs)
    logger.info("sweep | points=%d rows=%d out=%s", len(points), len(rows), out_dir)
    return EXIT_OK


def _mean(values: list[float]) -> float | None:
    return sum(values) / len(values) if values else None


def _std(values: list[float]) -> float | None:
    if not values:
        return None
    mean = sum(values) / len(values)
    return (sum((v - mean) ** 2 for v in values) / len(values)) ** 0.5


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cohscore", description=__doc__)
    parser.add_argument("--version", action="version", version=f"cohscore {__version__}")
    parser.add_argument("--quiet", action="store_true", help="warnings only")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="build training data from a corpus")
    gen.add_argument("--corpus", help="input corpus (.jsonl or .txt)")
    gen.add_argument("--synthetic", type=int, default=0, metavar="N",
                     help="generate N bundled synthetic narratives instead of reading a corpus")
    gen.add_argument("--task", choices=["permuted", "intrusion"], default="permuted")
    gen.add_argument("--repetitions", type=int, default=20)
    gen.add_argument("--negatives", type=int, default=5)
    gen.add_argument("--similarity", choices=["random", "lexical-overlap"], default="random")
    gen.add_argument("--min-sentences", type=int, default=4)
    gen.add_argument("--max-tokens", type=int, default=600)
    gen.add_argument("--block-threshold", type=int, default=20)
    gen.add_argument("--block-size", type=int, default=10)
    gen.add_argument("--holdout-docs", type=int, default=0,
                     help="reserve this many trailing documents for eval pairs")
    gen.add_argument("--holdout-pairs-per-doc", type=int, default=1)
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_generate)

    tr = sub.add_parser("train", help="train a coherence scorer")
    tr.add_argument("--config", help="flat JSON config mirroring the trainer fields")
    tr.add_argument("--set", action="append", metavar="KEY=VALUE",
                    help="override a config key (repeatable)")
    tr.add_argument("--regime", choices=["pairwise", "contrastive", "full"])
    tr.add_argument("--max-steps", type=int)
    tr.add_argument("--seed", type=int)
    tr.add_argument("--corpus", required=True)
    tr.add_argument("--instances", required=True)
    tr.add_argument("--dev-pairs")
    tr.add_argument("--resume", help="checkpoint directory to continue from")
    tr.add_argument("--out", required=True)
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("evaluate", help="evaluate a checkpoint on a pair file")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--pairs", required=True)
    ev.add_argument("--schema", choices=["generic", "judgments", "probes"], default="generic")
    ev.add_argument("--keep-ties", action="store_true",
                    help="include rating-tie pairs, counting them as incorrect")
    ev.add_argument("--agreement-mode", choices=["additional-rater", "vs-majority"],
                    default="additional-rater")
    ev.add_argument("--dataset", help="dataset label for the report")
    ev.add_argument("--out", required=True)
    ev.set_defaults(func=cmd_evaluate)

    sc = sub.add_parser("score", help="score documents with a checkpoint")
    sc.add_argument("--checkpoint", required=True)
    sc.add_argument("--docs", required=True)
    sc.add_argument("--out", required=True)
    sc.set_defaults(func=cmd_score)

    sw = sub.add_parser("sweep", help="grid of training runs in child processes")
    sw.add_argument("--config", help="base flat JSON config")
    sw.add_argument("--set", action="append", metavar="KEY=VALUE")
    sw.add_argument("--grid", required=True, help="JSON file: {parameter: [values]}")
    sw.add_argument("--seeds", required=True, help="comma-separated seeds")
    sw.add_argument("--corpus", required=True)
    sw.add_argument("--instances", required=True)
    sw.add_argument("--dev-pairs")
    sw.add_argument("--test-pairs", required=True)
    sw.add_argument("--out", required=True)
    sw.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s | %(message)s",
    )
    try:
        return args.func(args)
    except TrainingDiverged as exc:
        logger.error("training diverged: %s", exc)
        return EXIT_DIVERGED
    except (
        CorpusFormatError,
        EvalPairFormatError,
        PermutationPoolExhausted,
        CheckpointError,
        ValueError,
        KeyError,
        OSError,
        json.JSONDecodeError,
    ) as exc:
        logger.error("%s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
