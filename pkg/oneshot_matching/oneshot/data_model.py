"""
Core types for the two modalities and their canonicalization.

A FeatureSequence is a (frames, dim) matrix of per-frame speech features; an
ImageGrid an (H, W) matrix of pixel intensities. Both are immutable: every
canonicalization returns a new object.
"""
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence, Tuple

import numpy as np

from .exceptions import InvalidInputError


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=np.float64, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class FeatureSequence:
    """
    Variable-length speech features.

    Fields:
        - frames (ndarray): (T, d) real matrix, one row per frame.
        - class_id (int): Spoken word class.
        - speaker_id (int): Speaker provenance tag.
        - source_index (int): Position in the pool the item was drawn from;
          identity for episode disjointness checks.
    """

    frames: np.ndarray
    class_id: int
    speaker_id: int = 0
    source_index: int = -1

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2:
            raise InvalidInputError(f"frames must be a (T, d) matrix, got shape {frames.shape}")
        if frames.shape[1] < 1:
            raise InvalidInputError("frames have zero dimension")
        if frames.shape[0] < 1:
            raise InvalidInputError("a feature sequence needs at least one frame")
        object.__setattr__(self, "frames", _frozen(frames))

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True, eq=False)
class ImageGrid:
    """
    Fixed-size grid of pixel intensities.

    Fields:
        - pixels (ndarray): (H, W) real matrix.
        - class_id (int): Image class; -1 when read without labels.
        - writer_id (int, optional): Writer provenance tag.
        - source_index (int): Position in the pool the item was drawn from.
    """

    pixels: np.ndarray
    class_id: int
    writer_id: Optional[int] = None
    source_index: int = -1

    def __post_init__(self):
        pixels = np.asarray(self.pixels, dtype=np.float64)
        if pixels.ndim != 2 or 0 in pixels.shape:
            raise InvalidInputError(f"pixels must be a non-empty (H, W) matrix, got shape {pixels.shape}")
        object.__setattr__(self, "pixels", _frozen(pixels))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.pixels.shape


@dataclass(frozen=True)
class ClassTable:
    """
    Dataset-scoped class names plus the spoken-to-image alias links.

    Spoken "oh" and "zero" are distinct spoken classes that both depict image
    class 0, so ``aliases`` maps the "oh" id onto 0. Classes without an alias
    depict the image class with their own id.
    """

    names: Mapping[int, str] = field(default_factory=dict)
    aliases: Mapping[int, int] = field(default_factory=dict)

    def image_class(self, audio_class_id: int) -> int:
        return self.aliases.get(audio_class_id, audio_class_id)

    def name(self, class_id: int) -> str:
        return self.names.get(class_id, str(class_id))


@dataclass(frozen=True, eq=False)
class PairedExample:
    """One spoken item and one image of the same class (co-occurrence supervision)."""

    audio: FeatureSequence
    image: ImageGrid
    class_table: Optional[ClassTable] = None

    def __post_init__(self):
        expected = self.image_class_id
        if self.image.class_id != expected:
            raise InvalidInputError(
                f"paired image has class {self.image.class_id}, spoken class "
                f"{self.audio.class_id} depicts image class {expected}"
            )

    @property
    def class_id(self) -> int:
        return self.audio.class_id

    @property
    def image_class_id(self) -> int:
        if self.class_table is None:
            return self.audio.class_id
        return self.class_table.image_class(self.audio.class_id)


@dataclass(frozen=True, eq=False)
class SupportSet:
    """L classes times K speech-image pairs, shown once before testing."""

    pairs: Tuple[PairedExample, ...]
    ways: int
    shots: int

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple(self.pairs))
        if len(self.pairs) != self.ways * self.shots:
            raise InvalidInputError(
                f"support set holds {len(self.pairs)} pairs, expected {self.ways}x{self.shots}"
            )
        counts = {}
        for pair in self.pairs:
            counts[pair.class_id] = counts.get(pair.class_id, 0) + 1
        if len(counts) != self.ways or any(c != self.shots for c in counts.values()):
            raise InvalidInputError(
                f"support set must hold exactly {self.shots} pairs for each of "
                f"{self.ways} classes, got {dict(sorted(counts.items()))}"
            )

    @property
    def audio(self) -> Tuple[FeatureSequence, ...]:
        return tuple(pair.audio for pair in self.pairs)

    @property
    def images(self) -> Tuple[ImageGrid, ...]:
        return tuple(pair.image for pair in self.pairs)

    @property
    def class_ids(self) -> Tuple[int, ...]:
        return tuple(pair.class_id for pair in self.pairs)

    @property
    def image_class_ids(self) -> Tuple[int, ...]:
        return tuple(pair.image_class_id for pair in self.pairs)

    @property
    def speakers(self) -> frozenset:
        return frozenset(pair.audio.speaker_id for pair in self.pairs)


@dataclass(frozen=True, eq=False)
class MatchingSet:
    """Test-side image pool from which a query's match is picked."""

    items: Tuple[ImageGrid, ...]

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))

    def __len__(self) -> int:
        return len(self.items)


def canonicalize_sequence(seq: FeatureSequence, target_frames: int) -> FeatureSequence:
    """
    Centre zero-pad or crop ``seq`` to exactly ``target_frames`` frames.

    When the pad total is odd the extra zero frame goes after the content;
    when the crop total is odd the extra frame is removed from the end.
    """
    if target_frames < 1:
        raise InvalidInputError(f"target_frames must be positive, got {target_frames}")
    frames = seq.frames
    length = frames.shape[0]
    if length < target_frames:
        total = target_frames - length
        before = total // 2
        frames = np.pad(frames, ((before, total - before), (0, 0)))
    elif length > target_frames:
        start = (length - target_frames) // 2
        frames = frames[start:start + target_frames]
    else:
        return seq
    return replace(seq, frames=frames)


def normalize_pixels(img: ImageGrid, source_max: float = 255.0) -> ImageGrid:
    """Scale raw intensities in [0, source_max] to [0, 1]."""
    if source_max <= 0:
        raise InvalidInputError(f"source_max must be positive, got {source_max}")
    pixels = img.pixels
    if pixels.min() < 0 or pixels.max() > source_max:
        raise InvalidInputError(
            f"pixels span [{pixels.min()}, {pixels.max()}], outside [0, {source_max}]"
        )
    return replace(img, pixels=pixels / source_max)


def invert_pixels(img: ImageGrid) -> ImageGrid:
    """Complement normalized pixels (dark strokes on light ground and back)."""
    pixels = img.pixels
    if pixels.min() < 0 or pixels.max() > 1:
        raise InvalidInputError("invert_pixels expects normalized pixels in [0, 1]")
    return replace(img, pixels=1.0 - pixels)


def flatten(img: ImageGrid) -> np.ndarray:
    return img.pixels.reshape(-1)


def unflatten(vector: Sequence[float], height: int, width: int, class_id: int = -1) -> ImageGrid:
    vector = np.asarray(vector, dtype=np.float64)
    if vector.ndim != 1 or vector.size != height * width:
        raise InvalidInputError(
            f"cannot reshape a vector of {vector.size} values into {height}x{width}"
        )
    return ImageGrid(pixels=vector.reshape(height, width), class_id=class_id)
