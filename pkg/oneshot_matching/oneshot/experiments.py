"""
Wiring between configs, data, training and evaluation.

The management commands stay thin: they resolve an ExperimentConfig and
call into this module, which loads (or generates) the splits, trains or
loads one network per modality and seed, and turns evaluation reports into
table rows, CSV files and stored records.
"""
import csv
import io
import logging
from dataclasses import replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from .architectures import build_network_spec
from .checkpoints import load_checkpoint, save_checkpoint
from .config import ExperimentConfig
from .datasets_io import (BACKGROUND_TRAIN, BACKGROUND_VALIDATION, ONESHOT_TEST, DatasetManifest,
                          PairedDataset, enforce_disjoint_splits, load_split, read_manifest)
from .dtw import DtwConfig
from .episodes import SPEECH, VISION, EvalReport, evaluate
from .exceptions import ConfigError, DataFormatError
from .matchers import DirectMatcher, EmbeddingMatcher, EmbeddingTable
from .network import NetworkParams, NetworkSpec, init_params
from .serializers import (EvalRecordSerializer, EvalReportSerializer, TrainingRunSerializer,
                          build_synthetic_config, render_json)
from .synthetic import generate_synthetic_pairs
from .timing import StageTimer
from .training import (TrainingConfig, TrainingResult, build_validator, train_classifier, train_siamese,
                       write_training_log)

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("task", "model", "ways", "shots", "seed_count", "episodes",
               "mean_accuracy", "ci95_halfwidth", "wall_time_s")


def task_modalities(task: str) -> Tuple[str, ...]:
    if task == "unimodal-speech":
        return (SPEECH,)
    if task == "unimodal-vision":
        return (VISION,)
    return (SPEECH, VISION)


def load_benchmark(cfg: ExperimentConfig) -> Tuple[DatasetManifest, Dict[str, PairedDataset]]:
    """
    Splits named by ``cfg.manifest``, or a synthetic corpus from ``cfg.synthetic``.

    Raises:
        LeakageError: The manifest's background and one-shot classes overlap.
        DataFormatError: A referenced file is missing or malformed.
    """
    if cfg.manifest:
        manifest = enforce_disjoint_splits(read_manifest(cfg.manifest))
        splits = {name: load_split(manifest, name) for name in manifest.splits}
        return manifest, splits
    corpus = generate_synthetic_pairs(build_synthetic_config(cfg.synthetic))
    return corpus.manifest, dict(corpus.splits)


def _split(splits: Dict[str, PairedDataset], name: str) -> PairedDataset:
    try:
        return splits[name]
    except KeyError:
        raise DataFormatError(f"dataset has no '{name}' split (has {sorted(splits)})")


def _arrays(dataset: PairedDataset, modality: str):
    return dataset.speech_arrays() if modality == SPEECH else dataset.image_arrays()


def network_spec(cfg: ExperimentConfig, modality: str, splits: Dict[str, PairedDataset]) -> NetworkSpec:
    """Network for ``modality``; classifiers size their head from the background-train classes."""
    background = _split(splits, BACKGROUND_TRAIN)
    input_shape = _arrays(background, modality).inputs.shape[1:]
    head_classes = None
    if not cfg.is_siamese:
        head_classes = len(_arrays(background, modality).classes)
    return build_network_spec(cfg.family, modality, input_shape, cfg.preset, head_classes)


def checkpoint_path(directory, model: str, modality: str, seed: int) -> Path:
    return Path(directory) / f"{model}-{modality}-seed{seed}.ckpt"


def training_config(cfg: ExperimentConfig, seed: int, data_classes: int) -> TrainingConfig:
    p = cfg.p
    if cfg.is_siamese and p > data_classes:
        logger.warning(f"p={p} exceeds the {data_classes} background classes; using p={data_classes}")
        p = data_classes
    return TrainingConfig(lr=cfg.lr, decay=cfg.decay, epochs=cfg.epochs, batch_size=cfg.batch_size,
                          patience=cfg.patience, margin=cfg.margin, p=p, k=cfg.k,
                          steps_per_epoch=cfg.steps_per_epoch, exhaustive=cfg.exhaustive, seed=seed)


def train_network(cfg: ExperimentConfig, splits: Dict[str, PairedDataset], modality: str,
                  seed: int) -> TrainingResult:
    """
    Train one network for ``modality`` on the background-train split.

    Early stopping validates on background-validation one-shot episodes.
    """
    spec = network_spec(cfg, modality, splits)
    data = _arrays(_split(splits, BACKGROUND_TRAIN), modality)
    forbidden = set()
    if ONESHOT_TEST in splits:
        test = splits[ONESHOT_TEST]
        forbidden = set(test.audio_classes) | set(test.image_classes)
    validator = build_validator(splits.get(BACKGROUND_VALIDATION), modality, spec, cfg.embedding_metric,
                                cfg.validation_episodes, seed=seed, ways=cfg.ways,
                                normalize=cfg.normalize_embeddings)
    train_cfg = training_config(cfg, seed, len(data.classes))
    if cfg.is_siamese:
        variant = "online" if cfg.model == "siamese-online" else "offline"
        return train_siamese(data, spec, train_cfg, variant, validator, forbidden)
    return train_classifier(data, spec, train_cfg, validator, forbidden)


def run_training(cfg: ExperimentConfig, splits: Dict[str, PairedDataset], out_dir) -> List[dict]:
    """Train every (modality, seed) the task needs; save checkpoints, logs and TrainingRun rows."""
    if not cfg.model or cfg.model == "dtw-pixels":
        raise ConfigError("dtw-pixels has no parameters to train")
    out_dir = Path(out_dir)
    stored = []
    for modality in task_modalities(cfg.task):
        for seed in cfg.seed_list:
            with StageTimer(f"Training {cfg.model} ({modality}, seed {seed})", logger):
                result = train_network(cfg, splits, modality, seed)
            path = save_checkpoint(checkpoint_path(out_dir, cfg.model, modality, seed), result.params, result.spec)
            log_path = write_training_log(path.with_suffix(".log.jsonl"), result.log)
            serializer = TrainingRunSerializer(data={
                "model": cfg.model,
                "modality": modality,
                "seed": seed,
                "checkpoint_path": str(path),
                "log_path": str(log_path),
                "spec_digest": result.spec.digest().hex(),
                "epochs_completed": result.epochs_completed,
                "best_epoch": result.best_epoch,
                "best_val_accuracy": result.best_val_accuracy,
                "final_loss": result.final_loss,
                "config": {**cfg.as_dict(), "seed": seed, "p": result.config.p},
            })
            serializer.is_valid(raise_exception=True)
            stored.append(TrainingRunSerializer(serializer.save()).data)
    return stored


TrainedParams = Dict[Tuple[str, int], NetworkParams]


def _params_for(cfg: ExperimentConfig, spec: NetworkSpec, modality: str, seed: int,
                trained: Optional[TrainedParams] = None) -> NetworkParams:
    if trained is not None:
        try:
            return trained[(modality, seed)]
        except KeyError:
            raise ConfigError(f"no {cfg.model} network was trained for {modality} with seed {seed}")
    if cfg.untrained:
        return init_params(spec, seed)
    if not cfg.checkpoint_dir:
        raise ConfigError(f"{cfg.model} needs --checkpoints (or --untrained for random weights)")
    return load_checkpoint(checkpoint_path(cfg.checkpoint_dir, cfg.model, modality, seed), spec)


def matcher_factory(cfg: ExperimentConfig, splits: Dict[str, PairedDataset],
                    trained: Optional[TrainedParams] = None) -> Callable[[int], object]:
    """
    Per-seed distance provider over the one-shot split's pools.

    Network parameters come from ``trained`` ((modality, seed) -> params) when
    given, else from checkpoints or a fresh initialization.
    """
    if cfg.model == "dtw-pixels":
        matcher = DirectMatcher(DtwConfig(cfg.dtw_local_distance, cfg.dtw_normalize))
        return lambda seed: matcher

    test = _split(splits, ONESHOT_TEST)
    specs = {modality: network_spec(cfg, modality, splits) for modality in task_modalities(cfg.task)}

    def build(seed: int) -> EmbeddingMatcher:
        tables = {
            modality: EmbeddingTable.from_network(_params_for(cfg, spec, modality, seed, trained), spec,
                                                  _arrays(test, modality).inputs, cfg.embedding_metric,
                                                  cfg.normalize_embeddings)
            for modality, spec in specs.items()
        }
        return EmbeddingMatcher(cfg.model, speech=tables.get(SPEECH), vision=tables.get(VISION))

    return build


def effective_ways(cfg: ExperimentConfig, test: PairedDataset) -> int:
    if cfg.task != "unimodal-vision":
        return cfg.ways
    image_classes = len({test.image_class(c) for c in test.audio_classes})
    if cfg.ways > image_classes:
        logger.warning(f"unimodal-vision is capped at the {image_classes} distinct image classes "
                       f"(asked for {cfg.ways}-way)")
        return image_classes
    return cfg.ways


def run_evaluation(cfg: ExperimentConfig, splits: Dict[str, PairedDataset],
                   trained: Optional[TrainedParams] = None) -> EvalReport:
    test = _split(splits, ONESHOT_TEST)
    return evaluate(
        cfg.task,
        matcher_factory(cfg, splits, trained),
        test,
        ways=effective_ways(cfg, test),
        shots=cfg.shots,
        matching_size=cfg.matching_size,
        episodes=cfg.episodes,
        queries=cfg.queries,
        seeds=cfg.seed_list,
        aggregation=cfg.aggregation,
        speaker_disjoint=cfg.speaker_disjoint,
        workers=cfg.workers,
        model=cfg.model,
        config=cfg.as_dict(),
    )


def freeze_wall_time(report: EvalReport) -> EvalReport:
    return replace(report, wall_time_s=0.0)


def csv_row(report: EvalReport) -> dict:
    return {
        "task": report.task,
        "model": report.model,
        "ways": report.ways,
        "shots": report.shots,
        "seed_count": report.seed_count,
        "episodes": report.episodes,
        "mean_accuracy": f"{report.mean_accuracy:.6f}",
        "ci95_halfwidth": f"{report.ci95_halfwidth:.6f}",
        "wall_time_s": f"{report.wall_time_s:.3f}",
    }


def render_csv(rows: Sequence[dict]) -> str:
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buffer.getvalue()


def format_table(rows: Sequence[dict]) -> str:
    """Model, task and accuracy as mean +- CI, one row per report."""
    header = f"{'Model':<18} {'Task':<20} {'Ways':>4} {'Shots':>5} {'Accuracy':>20}"
    lines = [header, "-" * len(header)]
    for row in rows:
        accuracy = f"{100 * float(row['mean_accuracy']):.2f}% +- {100 * float(row['ci95_halfwidth']):.2f}"
        lines.append(f"{row['model']:<18} {row['task']:<20} {row['ways']:>4} {row['shots']:>5} {accuracy:>20}")
    return "\n".join(lines)


def report_json(report: EvalReport) -> bytes:
    return render_json(EvalReportSerializer(report).data)


def store_report(report: EvalReport):
    serializer = EvalRecordSerializer(data={
        "task": report.task,
        "model": report.model,
        "ways": report.ways,
        "shots": report.shots,
        "matching_size": report.matching_size,
        "episodes": report.episodes,
        "queries": report.queries_per_episode,
        "per_seed_accuracies": list(report.per_seed_accuracies),
        "mean_accuracy": report.mean_accuracy,
        "ci95_halfwidth": report.ci95_halfwidth,
        "wall_time_s": report.wall_time_s,
        "config": report.config,
    })
    serializer.is_valid(raise_exception=True)
    return serializer.save()


def record_row(record) -> dict:
    return {
        "task": record.task,
        "model": record.model,
        "ways": record.ways,
        "shots": record.shots,
        "seed_count": record.seed_count,
        "episodes": record.episodes,
        "mean_accuracy": f"{record.mean_accuracy:.6f}",
        "ci95_halfwidth": f"{record.ci95_halfwidth:.6f}",
        "wall_time_s": f"{record.wall_time_s:.3f}",
    }
