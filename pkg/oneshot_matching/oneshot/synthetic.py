"""
Synthetic paired speech/image corpus for desk-scale experiments.

Every class gets an audio prototype (frames x dim) and an image prototype
(H x W). An utterance is its class prototype, time-stretched by a random
factor, plus Gaussian noise and a constant per-speaker offset, then centre
padded/cropped. An image is its prototype plus Gaussian noise, clipped to
[0, 1] and quantized to bytes so that the IDX files reproduce it exactly.

With ``signal_rank`` > 0 every prototype is a random combination of a few
smooth patterns shared by all classes. Speech prototypes then live in a
fixed low-dimensional subspace of the feature space and speaker offsets in
its complement, so a network trained on background classes can learn what
to ignore while frame and pixel distances cannot.
"""
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .data_model import ClassTable, FeatureSequence, ImageGrid, canonicalize_sequence
from .datasets_io import (BACKGROUND_TRAIN, BACKGROUND_VALIDATION, ONESHOT_TEST, DatasetManifest,
                          PairedDataset, SplitEntry, enforce_disjoint_splits, write_feature_archive,
                          write_idx_images, write_idx_labels, write_manifest)
from .exceptions import ConfigError

logger = logging.getLogger(__name__)

DIGIT_NAMES = ("zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "oh")
# cosine components per axis of the smooth speech and image patterns
TEMPORAL_COMPONENTS = 4
SPATIAL_COMPONENTS = 4


@dataclass(frozen=True)
class SyntheticConfig:
    """
    Generator knobs.

    Fields:
        - background_classes / oneshot_classes (int): Class counts per side.
        - speakers (int): Speakers per side (background and one-shot speakers differ).
        - utterances_per_speaker (int): Utterances of each class by each speaker.
        - validation_utterances (int): Same, for the background-validation split.
        - feature_dim, frames (int): Speech feature size after canonicalization.
        - length_jitter (float): Utterance lengths are frames * U(1 - j, 1 + j).
        - image_height, image_width (int): Image size.
        - prototype_scale (float): Spread of class prototypes; 0 makes all classes alike.
        - noise (float): Per-instance Gaussian noise sigma.
        - speaker_offset (float): Per-speaker constant offset scale tau (audio only).
        - image_noise (float, optional): Image noise sigma; defaults to ``noise``.
        - signal_rank (int): 0 draws every prototype element independently;
          otherwise the number of shared smooth patterns that class prototypes
          are combined from (see the module docstring).
        - speaker_rank (int): Feature axes speaker offsets vary along; 0 uses
          every axis outside the class content.
        - alias_last (bool): The last one-shot spoken class depicts image class 0
          ("oh" and "zero").
        - seed (int): Seed of the whole corpus.
    """

    background_classes: int = 20
    oneshot_classes: int = 11
    speakers: int = 12
    utterances_per_speaker: int = 2
    validation_utterances: int = 1
    feature_dim: int = 13
    frames: int = 40
    length_jitter: float = 0.15
    image_height: int = 28
    image_width: int = 28
    prototype_scale: float = 1.0
    noise: float = 0.6
    speaker_offset: float = 0.3
    image_noise: Optional[float] = None
    signal_rank: int = 0
    speaker_rank: int = 0
    alias_last: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.oneshot_classes < 2:
            raise ConfigError("the one-shot split needs at least two classes")
        if self.background_classes < 0 or self.speakers < 1 or self.utterances_per_speaker < 1:
            raise ConfigError("class, speaker and utterance counts must be positive")
        if self.background_classes + self.oneshot_classes > 256:
            raise ConfigError("class ids must fit the one-byte IDX label range")
        if min(self.noise, self.speaker_offset, self.prototype_scale) < 0:
            raise ConfigError("noise, speaker offset and prototype scale must be non-negative")
        if self.image_noise is not None and self.image_noise < 0:
            raise ConfigError("image noise must be non-negative")
        if not 0 <= self.length_jitter < 1:
            raise ConfigError("length jitter must lie in [0, 1)")
        if self.signal_rank < 0 or self.speaker_rank < 0:
            raise ConfigError("signal and speaker ranks must be non-negative")
        if self.signal_rank + self.speaker_rank > self.feature_dim:
            raise ConfigError("signal and speaker ranks together exceed feature_dim")
        if self.signal_rank:
            if self.signal_rank >= self.feature_dim:
                raise ConfigError("signal rank must leave room for speaker offsets below feature_dim")
            if self.signal_rank > SPATIAL_COMPONENTS ** 2 - 1:
                raise ConfigError(f"signal rank is at most {SPATIAL_COMPONENTS ** 2 - 1}")
            if min(self.image_height, self.image_width) < SPATIAL_COMPONENTS:
                raise ConfigError(f"low-rank images need at least {SPATIAL_COMPONENTS} rows and columns")

    @property
    def image_sigma(self) -> float:
        return self.noise if self.image_noise is None else self.image_noise

    @property
    def oneshot_ids(self) -> List[int]:
        return list(range(self.oneshot_classes))

    @property
    def background_ids(self) -> List[int]:
        return list(range(self.oneshot_classes, self.oneshot_classes + self.background_classes))

    def class_table(self) -> ClassTable:
        if self.oneshot_classes == len(DIGIT_NAMES) and self.alias_last:
            names = dict(enumerate(DIGIT_NAMES))
        else:
            names = {c: f"word-{c}" for c in self.oneshot_ids}
        names.update({c: f"background-{c}" for c in self.background_ids})
        aliases = {self.oneshot_classes - 1: 0} if self.alias_last else {}
        return ClassTable(names=names, aliases=aliases)


@dataclass(frozen=True, eq=False)
class SyntheticCorpus:
    manifest: DatasetManifest
    splits: Dict[str, PairedDataset] = field(default_factory=dict)


def _stretch(prototype: np.ndarray, length: int) -> np.ndarray:
    source = np.linspace(0.0, 1.0, prototype.shape[0])
    target = np.linspace(0.0, 1.0, length)
    return np.stack([np.interp(target, source, prototype[:, d]) for d in range(prototype.shape[1])], axis=1)


def _cosine_basis(length: int, components: int) -> np.ndarray:
    """(length, components) slow cosines over ``length`` samples; the first is constant."""
    positions = (np.arange(length) + 0.5) / length
    return np.cos(np.pi * positions[:, None] * np.arange(components)[None, :])


class _Generator:
    def __init__(self, cfg: SyntheticConfig) -> None:
        self.cfg = cfg
        self.table = cfg.class_table()
        self.rng = np.random.default_rng(cfg.seed)
        all_classes = cfg.oneshot_ids + cfg.background_ids
        image_classes = sorted({self.table.image_class(c) for c in all_classes})
        if cfg.signal_rank:
            self._draw_low_rank_prototypes(all_classes, image_classes)
        else:
            shape = (cfg.frames, cfg.feature_dim)
            self.audio_prototypes = {c: self.rng.normal(0.0, 1.0, shape) * cfg.prototype_scale
                                     for c in all_classes}
            image_shape = (cfg.image_height, cfg.image_width)
            self.image_prototypes = {c: 0.5 + (self.rng.random(image_shape) - 0.5) * cfg.prototype_scale
                                     for c in image_classes}
            self.offset_axes = np.eye(cfg.feature_dim)
        if cfg.speaker_rank:
            self.offset_axes = self.offset_axes[:cfg.speaker_rank]
        speaker_ids = range(2 * cfg.speakers)
        self.speaker_offsets = {
            s: self.rng.normal(0.0, 1.0, len(self.offset_axes)) @ self.offset_axes * cfg.speaker_offset
            for s in speaker_ids
        }

    def _draw_low_rank_prototypes(self, audio_classes: List[int], image_classes: List[int]) -> None:
        cfg = self.cfg
        rank = cfg.signal_rank
        axes, _ = np.linalg.qr(self.rng.normal(0.0, 1.0, (cfg.feature_dim, cfg.feature_dim)))
        # class content spans the first `rank` feature axes, speakers the rest
        self.signal_axes, self.offset_axes = axes.T[:rank], axes.T[rank:]
        temporal = _cosine_basis(cfg.frames, TEMPORAL_COMPONENTS)
        mixing = self.rng.normal(0.0, 1.0, (rank, TEMPORAL_COMPONENTS, rank)) / np.sqrt(TEMPORAL_COMPONENTS)
        speech_patterns = np.einsum("tk,jkr,rd->jtd", temporal, mixing, self.signal_axes)

        rows = _cosine_basis(cfg.image_height, SPATIAL_COMPONENTS)
        columns = _cosine_basis(cfg.image_width, SPATIAL_COMPONENTS)
        weights = self.rng.normal(0.0, 1.0, (rank, SPATIAL_COMPONENTS, SPATIAL_COMPONENTS))
        weights[:, 0, 0] = 0.0
        flat = np.einsum("hu,juv,wv->jhw", rows, weights, columns).reshape(rank, -1)
        orthonormal, _ = np.linalg.qr(flat.T)
        # unit mean square per pixel
        image_patterns = (orthonormal.T * np.sqrt(flat.shape[1])).reshape(rank, cfg.image_height, cfg.image_width)

        scale = cfg.prototype_scale / np.sqrt(rank)
        self.audio_prototypes = {
            c: np.tensordot(self.rng.normal(0.0, 1.0, rank), speech_patterns, axes=1) * scale
            for c in audio_classes
        }
        self.image_prototypes = {
            c: np.clip(0.5 + 0.25 * scale * np.tensordot(self.rng.normal(0.0, 1.0, rank), image_patterns, axes=1),
                       0.0, 1.0)
            for c in image_classes
        }

    def utterance(self, class_id: int, speaker_id: int, index: int) -> FeatureSequence:
        cfg = self.cfg
        stretch = self.rng.uniform(1.0 - cfg.length_jitter, 1.0 + cfg.length_jitter)
        length = max(1, int(round(cfg.frames * stretch)))
        frames = _stretch(self.audio_prototypes[class_id], length)
        frames = frames + self.rng.normal(0.0, 1.0, frames.shape) * cfg.noise
        frames = frames + self.speaker_offsets[speaker_id][None, :]
        seq = FeatureSequence(frames=frames.astype(np.float32), class_id=class_id,
                              speaker_id=speaker_id, source_index=index)
        return canonicalize_sequence(seq, cfg.frames)

    def image(self, image_class: int, index: int) -> ImageGrid:
        prototype = self.image_prototypes[image_class]
        pixels = np.clip(prototype + self.rng.normal(0.0, 1.0, prototype.shape) * self.cfg.image_sigma, 0, 1)
        return ImageGrid(pixels=np.round(pixels * 255.0) / 255.0, class_id=image_class, source_index=index)

    def split(self, classes: List[int], speakers: List[int], utterances: int) -> PairedDataset:
        audio = []
        for class_id in classes:
            for speaker_id in speakers:
                for _ in range(utterances):
                    audio.append(self.utterance(class_id, speaker_id, len(audio)))
        demand: Dict[int, List[int]] = {}
        for seq in audio:
            demand.setdefault(self.table.image_class(seq.class_id), []).append(seq.source_index)
        images, pairs = [], []
        for image_class in sorted(demand):
            start = len(images)
            images.extend(self.image(image_class, start + i) for i in range(len(demand[image_class])))
            pool = np.arange(start, len(images))
            order = self.rng.permutation(pool)
            for position, audio_index in enumerate(demand[image_class]):
                image_index = order[position] if position < len(order) else self.rng.choice(pool)
                pairs.append((audio_index, int(image_index)))
        pairs.sort()
        return PairedDataset(audio=audio, images=images, pairs=pairs, class_table=self.table)


def generate_synthetic_pairs(cfg: SyntheticConfig = SyntheticConfig()) -> SyntheticCorpus:
    """
    Generate background-train, background-validation and one-shot-test splits.

    Background and one-shot splits use disjoint class ranges and disjoint
    speakers. The same config always yields the same corpus.
    """
    generator = _Generator(cfg)
    background_speakers = list(range(cfg.speakers))
    oneshot_speakers = list(range(cfg.speakers, 2 * cfg.speakers))
    splits = {
        BACKGROUND_TRAIN: generator.split(cfg.background_ids, background_speakers, cfg.utterances_per_speaker),
        BACKGROUND_VALIDATION: generator.split(cfg.background_ids, background_speakers, cfg.validation_utterances),
        ONESHOT_TEST: generator.split(cfg.oneshot_ids, oneshot_speakers, cfg.utterances_per_speaker),
    }
    entries = {
        name: SplitEntry(
            audio_path=f"{name}-audio.fsa",
            images_path=f"{name}-images.idx3",
            labels_path=f"{name}-labels.idx1",
            pairs=dataset.pairs,
            audio_classes=tuple(dataset.audio_classes),
            image_classes=tuple(dataset.image_classes),
            speakers=tuple(sorted({seq.speaker_id for seq in dataset.audio})),
        )
        for name, dataset in splits.items()
    }
    manifest = DatasetManifest(
        splits=entries,
        class_table=generator.table,
        frames=cfg.frames,
        feature_dim=cfg.feature_dim,
        image_shape=(cfg.image_height, cfg.image_width),
        seed=cfg.seed,
        generator=asdict(cfg),
    )
    enforce_disjoint_splits(manifest)
    logger.info(
        f"Generated synthetic corpus (seed={cfg.seed}, sigma={cfg.noise}, tau={cfg.speaker_offset}): "
        + ", ".join(f"{name}={len(ds.audio)}" for name, ds in splits.items())
    )
    return SyntheticCorpus(manifest=manifest, splits=splits)


def write_corpus(corpus: SyntheticCorpus, out_dir) -> Path:
    """Write archives, IDX files and ``manifest.json`` into ``out_dir``; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, dataset in corpus.splits.items():
        entry = corpus.manifest.splits[name]
        write_feature_archive(out_dir / entry.audio_path, dataset.audio)
        height, width = corpus.manifest.image_shape
        pixels = np.zeros((len(dataset.images), height, width))
        for row, img in enumerate(dataset.images):
            pixels[row] = np.round(img.pixels * 255.0)
        write_idx_images(out_dir / entry.images_path, pixels)
        write_idx_labels(out_dir / entry.labels_path, [img.class_id for img in dataset.images])
    return write_manifest(out_dir / "manifest.json", corpus.manifest)
