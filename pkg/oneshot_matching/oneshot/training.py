"""
Training loops for classifier-transfer and Siamese embedding networks.

Both loops run on background data only, decay the learning rate once per
epoch, stop early on one-shot validation accuracy and keep the parameters
of the best validation epoch.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, List, Optional, Sequence

import numpy as np

from .datasets_io import PairedDataset
from .episodes import SPEECH, VISION, episode_sampler, score_episode
from .exceptions import InvalidInputError, LeakageError, SamplingError, TrainingDivergedError
from .matchers import EmbeddingMatcher, EmbeddingTable
from .mining import (LabelledArrays, TripletLossConfig, generate_offline_triplets, online_batch_loss,
                     sample_balanced_batch, triplet_batch_loss)
from .network import (AdamState, NetworkParams, NetworkSpec, adam_step, backward, forward, init_params,
                      softmax_cross_entropy)
from .serializers import EpochRecordSerializer, render_json

logger = logging.getLogger(__name__)

Validator = Callable[[NetworkParams], float]


@dataclass(frozen=True)
class TrainingConfig:
    """
    Fields:
        - lr, decay (float): Adam base learning rate and its per-epoch decay.
        - epochs (int): Maximum number of epochs.
        - batch_size (int): Classifier mini-batch size.
        - patience (int): Epochs without validation improvement before stopping.
        - margin (float): Triplet hinge margin.
        - p, k (int): Classes per Siamese batch and items per class.
        - steps_per_epoch (int): Siamese batches per epoch; 0 derives it from
          the dataset size.
        - exhaustive (bool): Offline variant trains on every triplet of a batch.
        - seed (int): Initialization and sampling seed.
    """

    lr: float = 1e-3
    decay: float = 0.96
    epochs: int = 100
    batch_size: int = 200
    patience: int = 5
    margin: float = 0.5
    p: int = 32
    k: int = 2
    steps_per_epoch: int = 0
    exhaustive: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise InvalidInputError("epochs, batch size and patience must be positive")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss: float
    val_accuracy: Optional[float]
    lr: float


@dataclass(frozen=True, eq=False)
class TrainingResult:
    params: NetworkParams
    spec: NetworkSpec
    config: TrainingConfig = field(default_factory=TrainingConfig)
    log: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val_accuracy: Optional[float] = None

    @property
    def epochs_completed(self) -> int:
        return len(self.log)

    @property
    def final_loss(self) -> float:
        return self.log[-1].loss if self.log else float("nan")


def guard_against_leakage(labels: Iterable[int], forbidden: Iterable[int]) -> None:
    """
    Raises:
        LeakageError: Training labels include one-shot classes.
    """
    overlap = set(int(c) for c in labels) & set(int(c) for c in forbidden)
    if overlap:
        raise LeakageError("refusing to train on one-shot classes", overlap)


class OneShotValidator:
    """
    One-shot accuracy of an embedding network on fixed validation episodes.

    Episodes are sampled once, so epochs are compared on identical trials.
    """

    def __init__(self, dataset: PairedDataset, modality: str, spec: NetworkSpec, metric: str,
                 ways: int = 11, episodes: int = 50, queries: int = 10, seed: int = 0,
                 normalize: bool = False) -> None:
        if modality not in (SPEECH, VISION):
            raise InvalidInputError(f"unknown modality '{modality}'")
        self.dataset = dataset
        self.modality = modality
        self.spec = spec
        self.metric = metric
        self.normalize = normalize
        self.task = "unimodal-speech" if modality == SPEECH else "unimodal-vision"
        available = (len(dataset.audio_classes) if modality == SPEECH
                     else len({dataset.image_class(c) for c in dataset.audio_classes}))
        self.ways = min(ways, available)
        sample = episode_sampler(self.task, dataset, self.ways, 1, self.ways, queries)
        self.episodes = [sample(stream) for stream in np.random.SeedSequence(seed).spawn(episodes)]
        self.inputs = dataset.speech_arrays().inputs if modality == SPEECH else dataset.image_arrays().inputs

    def __call__(self, params: NetworkParams) -> float:
        table = EmbeddingTable.from_network(params, self.spec, self.inputs, self.metric, self.normalize)
        if self.modality == SPEECH:
            matcher = EmbeddingMatcher(self.spec.name, speech=table)
        else:
            matcher = EmbeddingMatcher(self.spec.name, vision=table)
        correct = sum(score_episode(self.task, episode, matcher) for episode in self.episodes)
        trials = sum(len(episode.queries) for episode in self.episodes)
        return correct / trials


def build_validator(dataset: Optional[PairedDataset], modality: str, spec: NetworkSpec, metric: str,
                    episodes: int, seed: int = 0, ways: int = 11, normalize: bool = False) -> Optional[Validator]:
    """Validator over ``dataset``, or None (no early stopping) when there is nothing to validate on."""
    if dataset is None or episodes < 1:
        return None
    try:
        return OneShotValidator(dataset, modality, spec, metric, ways=ways, episodes=episodes,
                                seed=seed, normalize=normalize)
    except SamplingError as exc:
        logger.warning(f"Early stopping disabled, validation episodes cannot be sampled: {exc}")
        return None


class _EarlyStopping:
    def __init__(self, patience: int) -> None:
        self.patience = patience
        self.best_accuracy: Optional[float] = None
        self.best_epoch = 0
        self.best_params: Optional[NetworkParams] = None
        self.stale = 0

    def update(self, epoch: int, accuracy: Optional[float], params: NetworkParams) -> bool:
        """Record an epoch; True when training should stop."""
        if accuracy is None:
            self.best_epoch, self.best_params = epoch, params
            return False
        if self.best_accuracy is None or accuracy > self.best_accuracy:
            self.best_accuracy, self.best_epoch, self.best_params = accuracy, epoch, params
            self.stale = 0
            return False
        self.stale += 1
        return self.stale >= self.patience


def _check_loss(loss: float, epoch: int) -> None:
    if not np.isfinite(loss):
        raise TrainingDivergedError(f"loss became {loss} in epoch {epoch}")


def _run_epochs(params: NetworkParams, spec: NetworkSpec, cfg: TrainingConfig,
                epoch_step: Callable[[NetworkParams, AdamState, int], tuple],
                validator: Optional[Validator]) -> TrainingResult:
    state = AdamState.for_params(params, base_lr=cfg.lr, decay=cfg.decay)
    stopping = _EarlyStopping(cfg.patience)
    log: List[EpochRecord] = []
    for epoch in range(1, cfg.epochs + 1):
        lr = state.learning_rate
        params, state, loss = epoch_step(params, state, epoch)
        _check_loss(loss, epoch)
        accuracy = validator(params) if validator is not None else None
        record = EpochRecord(epoch=epoch, loss=loss, val_accuracy=accuracy, lr=lr)
        log.append(record)
        logger.info(f"{spec.name} epoch {epoch}: loss={loss:.5f} "
                    f"val_accuracy={'n/a' if accuracy is None else f'{accuracy:.4f}'} lr={lr:.3e}")
        if stopping.update(epoch, accuracy, params):
            logger.info(f"{spec.name}: no improvement for {cfg.patience} epochs, stopping after epoch {epoch}")
            break
        state = state.next_epoch()
    return TrainingResult(params=stopping.best_params, spec=spec, config=cfg, log=log,
                          best_epoch=stopping.best_epoch, best_val_accuracy=stopping.best_accuracy)


def train_classifier(data: LabelledArrays, spec: NetworkSpec, cfg: TrainingConfig = TrainingConfig(),
                     validator: Optional[Validator] = None, forbidden_classes: Iterable[int] = (),
                     params: Optional[NetworkParams] = None) -> TrainingResult:
    """
    Minimize softmax cross-entropy over the background classes.

    Class ids are mapped to head outputs in ascending order.

    Raises:
        LeakageError: ``data`` holds a class listed in ``forbidden_classes``.
        TrainingDivergedError: Loss or parameters became non-finite.
    """
    guard_against_leakage(data.classes, forbidden_classes)
    classes = data.classes
    if spec.head_classes != len(classes):
        raise InvalidInputError(f"{spec.name} has {spec.head_classes} outputs for {len(classes)} classes")
    targets = np.searchsorted(classes, data.labels)
    params = params or init_params(spec, cfg.seed)
    rng = np.random.default_rng(cfg.seed)

    def epoch_step(params, state, epoch):
        order = rng.permutation(len(data))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            rows = order[start:start + cfg.batch_size]
            activations = forward(params, spec, data.inputs[rows])
            loss, grad = softmax_cross_entropy(activations.output, targets[rows])
            _check_loss(loss, epoch)
            grads, _ = backward(params, spec, activations, grad)
            params, state = adam_step(params, grads, state)
            total += loss * len(rows)
        return params, state, total / len(order)

    logger.info(f"Training {spec.name} on {len(data)} items of {len(classes)} classes")
    return _run_epochs(params, spec, cfg, epoch_step, validator)


def _sum_grads(parts: Sequence[NetworkParams]) -> NetworkParams:
    return NetworkParams(tuple(
        {name: sum(part.tensors[index][name] for part in parts) for name in layer}
        for index, layer in enumerate(parts[0].tensors)
    ))


def train_siamese(data: LabelledArrays, spec: NetworkSpec, cfg: TrainingConfig = TrainingConfig(),
                  variant: str = "online", validator: Optional[Validator] = None,
                  forbidden_classes: Iterable[int] = (),
                  params: Optional[NetworkParams] = None) -> TrainingResult:
    """
    Minimize the triplet hinge loss over balanced p x k batches.

    ``online`` mines semi-hard negatives from the batch's own embeddings;
    ``offline`` pre-forms triplets and runs three weight-tied passes (anchor,
    positive, negative) through the same parameters.

    Raises:
        LeakageError: ``data`` holds a class listed in ``forbidden_classes``.
        TrainingDivergedError: Loss or parameters became non-finite.
    """
    if variant not in ("online", "offline"):
        raise InvalidInputError(f"unknown Siamese variant '{variant}'")
    guard_against_leakage(data.classes, forbidden_classes)
    loss_cfg = TripletLossConfig(margin=cfg.margin)
    steps = cfg.steps_per_epoch or max(1, len(data) // (cfg.p * cfg.k))
    params = params or init_params(spec, cfg.seed)
    rng = np.random.default_rng(cfg.seed)

    def online_step(params, batch):
        activations = forward(params, spec, batch.inputs)
        embeddings = activations.output.reshape(len(batch.inputs), -1)
        loss, grad = online_batch_loss(embeddings, batch.class_ids, loss_cfg)
        grads, _ = backward(params, spec, activations, grad.reshape(activations.output.shape))
        return loss, grads

    def offline_step(params, batch):
        triplets = generate_offline_triplets(batch, rng, exhaustive=cfg.exhaustive)
        passes = [forward(params, spec, batch.inputs[[getattr(t, role) for t in triplets]])
                  for role in ("anchor_idx", "positive_idx", "negative_idx")]
        outputs = [p.output.reshape(len(triplets), -1) for p in passes]
        loss, output_grads = triplet_batch_loss(*outputs, margin=cfg.margin)
        grads = [backward(params, spec, p, g.reshape(p.output.shape))[0] for p, g in zip(passes, output_grads)]
        return loss, _sum_grads(grads)

    step_fn = online_step if variant == "online" else offline_step

    def epoch_step(params, state, epoch):
        total = 0.0
        for _ in range(steps):
            batch = sample_balanced_batch(data, cfg.p, cfg.k, rng)
            loss, grads = step_fn(params, batch)
            _check_loss(loss, epoch)
            params, state = adam_step(params, grads, state)
            total += loss
        return params, state, total / steps

    logger.info(f"Training {spec.name} ({variant} Siamese, p={cfg.p} k={cfg.k} m={cfg.margin}) "
                f"for up to {cfg.epochs} epochs of {steps} steps")
    return _run_epochs(params, spec, cfg, epoch_step, validator)


def write_training_log(path, records: Iterable[EpochRecord]) -> Path:
    """One JSON object per line: epoch, loss, val_accuracy, lr."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [render_json(EpochRecordSerializer(record).data) for record in records]
    path.write_bytes(b"".join(line + b"\n" for line in lines))
    return path
