"""
Dataset containers and on-disk formats.

IDX (images and labels) is big-endian as defined by its originators::

    uint32 magic (0x00000803 images, 0x00000801 labels) | uint32 count
    [uint32 rows | uint32 cols]  (images only) | uint8 payload, row-major

FSA1 feature archives are little-endian throughout::

    b"FSA1" | uint32 count
    per item: int32 class id | int32 speaker id | uint32 frames T | uint32 dim d
              | T*d float32, frame-major

A JSON manifest ties the files of each split together with the class table
and the speech-image pairing.
"""
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .conf import oneshot_settings
from .data_model import (ClassTable, FeatureSequence, ImageGrid, PairedExample,
                         canonicalize_sequence, normalize_pixels)
from .exceptions import ConsistencyError, DataFormatError, InvalidInputError, LeakageError
from .mining import LabelledArrays

logger = logging.getLogger(__name__)

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
FSA_MAGIC = b"FSA1"

BACKGROUND_TRAIN = "background-train"
BACKGROUND_VALIDATION = "background-validation"
ONESHOT_TEST = "one-shot-test"
SPLITS = (BACKGROUND_TRAIN, BACKGROUND_VALIDATION, ONESHOT_TEST)
BACKGROUND_SPLITS = (BACKGROUND_TRAIN, BACKGROUND_VALIDATION)

PathLike = Union[str, Path]


@dataclass(frozen=True, eq=False)
class PairedDataset:
    """
    One split: an audio pool, an image pool and the speech-image pairing.

    ``pairs[i]`` is (audio index, image index). Items carry their pool
    position as ``source_index``.
    """

    audio: Tuple[FeatureSequence, ...]
    images: Tuple[ImageGrid, ...]
    pairs: Tuple[Tuple[int, int], ...]
    class_table: ClassTable = field(default_factory=ClassTable)

    def __post_init__(self):
        object.__setattr__(self, "audio", tuple(self.audio))
        object.__setattr__(self, "images", tuple(self.images))
        object.__setattr__(self, "pairs", tuple((int(a), int(i)) for a, i in self.pairs))
        for audio_index, image_index in self.pairs:
            if not (0 <= audio_index < len(self.audio) and 0 <= image_index < len(self.images)):
                raise InvalidInputError(f"pair ({audio_index}, {image_index}) is out of range")
        self._index()

    def _index(self):
        pairs_by_class: Dict[int, List[int]] = {}
        for position, (audio_index, _) in enumerate(self.pairs):
            pairs_by_class.setdefault(self.audio[audio_index].class_id, []).append(position)
        images_by_class: Dict[int, List[int]] = {}
        for image in self.images:
            images_by_class.setdefault(image.class_id, []).append(image.source_index)
        object.__setattr__(self, "_pairs_by_class", pairs_by_class)
        object.__setattr__(self, "_images_by_class", images_by_class)

    def pair(self, position: int) -> PairedExample:
        audio_index, image_index = self.pairs[position]
        return PairedExample(self.audio[audio_index], self.images[image_index], self.class_table)

    def pair_positions(self, class_id: int) -> List[int]:
        return list(self._pairs_by_class.get(class_id, ()))

    def image_indices(self, image_class_id: int) -> List[int]:
        return list(self._images_by_class.get(image_class_id, ()))

    @property
    def audio_classes(self) -> List[int]:
        return sorted(self._pairs_by_class)

    @property
    def image_classes(self) -> List[int]:
        return sorted(self._images_by_class)

    def image_class(self, audio_class_id: int) -> int:
        return self.class_table.image_class(audio_class_id)

    def speech_arrays(self) -> LabelledArrays:
        """Audio pool as (n, 1, dim, frames) network inputs."""
        return LabelledArrays(inputs=speech_inputs(self.audio),
                              labels=[seq.class_id for seq in self.audio])

    def image_arrays(self) -> LabelledArrays:
        """Image pool as (n, 1, H, W) network inputs."""
        return LabelledArrays(inputs=image_inputs(self.images),
                              labels=[img.class_id for img in self.images])


def speech_inputs(sequences: Sequence[FeatureSequence]) -> np.ndarray:
    shapes = {seq.frames.shape for seq in sequences}
    if len(shapes) > 1:
        raise InvalidInputError(f"sequences must be canonicalized to one shape, found {sorted(shapes)}")
    return np.stack([seq.frames.T[None] for seq in sequences]) if sequences else np.zeros((0, 1, 0, 0))


def image_inputs(images: Sequence[ImageGrid]) -> np.ndarray:
    return np.stack([img.pixels[None] for img in images]) if images else np.zeros((0, 1, 0, 0))


# IDX ---------------------------------------------------------------------

def _read_bytes(path: PathLike) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc}")


def _idx_header(data: bytes, magic: int, fields: int, path: PathLike) -> Tuple[int, ...]:
    size = 4 * (1 + fields)
    if len(data) < size:
        raise DataFormatError(f"{path}: header truncated", offset=len(data))
    values = struct.unpack(f">{1 + fields}I", data[:size])
    if values[0] != magic:
        raise DataFormatError(f"{path}: magic 0x{values[0]:08x}, expected 0x{magic:08x}", offset=0)
    return values[1:]


def read_idx_images(path: PathLike, labels: Optional[Sequence[int]] = None) -> List[ImageGrid]:
    """
    Decode an IDX image file, keeping raw byte values (normalize separately).

    Args:
        path: IDX3 file.
        labels (sequence, optional): Class ids aligned by index; -1 when absent.

    Raises:
        DataFormatError: Wrong magic, truncated payload or a dimension overflow.
        ConsistencyError: ``labels`` length differs from the item count.
    """
    data = _read_bytes(path)
    count, rows, cols = _idx_header(data, IDX_IMAGE_MAGIC, 3, path)
    expected = count * rows * cols
    if expected > np.iinfo(np.int64).max // 2 or (count and (rows == 0 or cols == 0)):
        raise DataFormatError(f"{path}: dimensions {count}x{rows}x{cols} overflow", offset=4)
    if len(data) - 16 < expected:
        raise DataFormatError(f"{path}: payload truncated, need {expected} bytes", offset=len(data))
    if labels is not None and len(labels) != count:
        raise ConsistencyError(f"{path}: {count} images but {len(labels)} labels")
    pixels = np.frombuffer(data, dtype=np.uint8, count=expected, offset=16).reshape(count, rows, cols)
    return [
        ImageGrid(pixels=pixels[i], class_id=int(labels[i]) if labels is not None else -1, source_index=i)
        for i in range(count)
    ]


def read_idx_labels(path: PathLike, expected_count: Optional[int] = None) -> List[int]:
    """
    Decode an IDX label file.

    Raises:
        ConsistencyError: Count differs from ``expected_count`` (the paired image file).
    """
    data = _read_bytes(path)
    (count,) = _idx_header(data, IDX_LABEL_MAGIC, 1, path)
    if len(data) - 8 < count:
        raise DataFormatError(f"{path}: payload truncated, need {count} bytes", offset=len(data))
    if expected_count is not None and count != expected_count:
        raise ConsistencyError(f"{path}: {count} labels but {expected_count} images")
    return np.frombuffer(data, dtype=np.uint8, count=count, offset=8).astype(int).tolist()


def write_idx_images(path: PathLike, pixels: np.ndarray) -> None:
    """Write a (count, rows, cols) stack of byte intensities."""
    pixels = np.asarray(pixels)
    if pixels.ndim != 3:
        raise InvalidInputError(f"expected a (count, rows, cols) stack, got shape {pixels.shape}")
    if pixels.size and (pixels.min() < 0 or pixels.max() > 255):
        raise InvalidInputError("IDX pixels must fit in an unsigned byte")
    pixels = pixels.astype(np.uint8)
    count, rows, cols = pixels.shape
    Path(path).write_bytes(struct.pack(">4I", IDX_IMAGE_MAGIC, count, rows, cols) + pixels.tobytes())


def write_idx_labels(path: PathLike, labels: Sequence[int]) -> None:
    values = np.asarray(labels, dtype=np.int64)
    if values.size and (values.min() < 0 or values.max() > 255):
        raise InvalidInputError("IDX labels must fit in an unsigned byte")
    Path(path).write_bytes(struct.pack(">2I", IDX_LABEL_MAGIC, len(values)) + values.astype(np.uint8).tobytes())


# FSA1 --------------------------------------------------------------------

def write_feature_archive(path: PathLike, sequences: Iterable[FeatureSequence]) -> None:
    sequences = list(sequences)
    chunks = [FSA_MAGIC, struct.pack("<I", len(sequences))]
    for seq in sequences:
        frames, dim = seq.frames.shape
        chunks.append(struct.pack("<iiII", seq.class_id, seq.speaker_id, frames, dim))
        chunks.append(np.ascontiguousarray(seq.frames, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_feature_archive(path: PathLike) -> List[FeatureSequence]:
    """
    Decode an FSA1 archive; ``source_index`` is the position in the archive.

    Raises:
        DataFormatError: Magic mismatch, truncation or non-finite values.
    """
    data = _read_bytes(path)
    if len(data) < 8:
        raise DataFormatError(f"{path}: header truncated", offset=len(data))
    if data[:4] != FSA_MAGIC:
        raise DataFormatError(f"{path}: magic {data[:4]!r}, expected {FSA_MAGIC!r}", offset=0)
    (count,) = struct.unpack_from("<I", data, 4)
    offset = 8
    sequences = []
    for index in range(count):
        if offset + 16 > len(data):
            raise DataFormatError(f"{path}: item {index} header truncated", offset=offset)
        class_id, speaker_id, frames, dim = struct.unpack_from("<iiII", data, offset)
        offset += 16
        size = frames * dim * 4
        if offset + size > len(data):
            raise DataFormatError(f"{path}: item {index} payload truncated", offset=offset)
        values = np.frombuffer(data, dtype="<f4", count=frames * dim, offset=offset)
        if not np.all(np.isfinite(values)):
            raise DataFormatError(f"{path}: item {index} holds non-finite values", offset=offset)
        try:
            sequences.append(FeatureSequence(frames=values.reshape(frames, dim), class_id=class_id,
                                             speaker_id=speaker_id, source_index=index))
        except InvalidInputError as exc:
            raise DataFormatError(f"{path}: item {index}: {exc}", offset=offset - 16)
        offset += size
    if offset != len(data):
        raise DataFormatError(f"{path}: trailing bytes after item {count - 1}", offset=offset)
    return sequences


# Manifest ----------------------------------------------------------------

@dataclass(frozen=True)
class SplitEntry:
    audio_path: str
    images_path: str
    labels_path: str
    pairs: Tuple[Tuple[int, int], ...]
    audio_classes: Tuple[int, ...]
    image_classes: Tuple[int, ...]
    speakers: Tuple[int, ...] = ()


@dataclass(frozen=True)
class DatasetManifest:
    """
    Splits, class and speaker tables, file references and pairing policy.

    Paths are relative to ``root`` (the manifest's directory) when not absolute.
    """

    splits: Dict[str, SplitEntry]
    class_table: ClassTable = field(default_factory=ClassTable)
    frames: int = 0
    feature_dim: int = 0
    image_shape: Tuple[int, int] = (28, 28)
    pairing: str = "without-replacement-then-with-replacement"
    seed: Optional[int] = None
    generator: Dict = field(default_factory=dict)
    root: str = "."

    def resolve(self, relative: str) -> Path:
        path = Path(relative)
        return path if path.is_absolute() else Path(self.root) / path


def enforce_disjoint_splits(manifest: DatasetManifest) -> DatasetManifest:
    """
    Reject manifests whose background splits share classes with the one-shot split.

    Raises:
        LeakageError: Listing every offending spoken or image class.
    """
    test = manifest.splits.get(ONESHOT_TEST)
    background = [manifest.splits[name] for name in BACKGROUND_SPLITS if name in manifest.splits]
    if test is None:
        return manifest
    audio_background = {c for split in background for c in split.audio_classes}
    image_background = {c for split in background for c in split.image_classes}
    if not audio_background and not image_background:
        logger.warning("Manifest has no background classes; disjointness holds vacuously")
        return manifest
    overlap = (audio_background & set(test.audio_classes)) | (image_background & set(test.image_classes))
    if overlap:
        raise LeakageError("background and one-shot splits share classes", overlap)
    return manifest


def write_manifest(path: PathLike, manifest: DatasetManifest) -> Path:
    from .serializers import DatasetManifestSerializer, render_json

    path = Path(path)
    path.write_bytes(render_json(DatasetManifestSerializer(manifest).data))
    return path


def read_manifest(path: PathLike) -> DatasetManifest:
    """
    Parse and validate a manifest file.

    Raises:
        DataFormatError: Unparseable or invalid manifest.
    """
    from .serializers import DatasetManifestSerializer, parse_json

    path = Path(path)
    serializer = DatasetManifestSerializer(data=parse_json(_read_bytes(path), path))
    if not serializer.is_valid():
        raise DataFormatError(f"{path}: invalid manifest: {serializer.errors}")
    return serializer.save(root=str(path.parent))


def _check_declared_classes(split: str, kind: str, found: Iterable[int], declared: Iterable[int]) -> None:
    """
    Raises:
        ConsistencyError: The data holds classes the manifest does not declare for ``split``.
    """
    undeclared = sorted({int(c) for c in found} - {int(c) for c in declared})
    if undeclared:
        raise ConsistencyError(f"split '{split}' holds {kind} classes its manifest entry does not declare: "
                               f"{undeclared}")


def load_split(manifest: DatasetManifest, split: str, target_frames: Optional[int] = None) -> PairedDataset:
    """
    Read one split's archive and IDX files into a PairedDataset.

    Speech is centre padded/cropped to ``target_frames`` (manifest frames by
    default, else the TARGET_FRAMES setting) and pixels are normalized to [0, 1].

    Raises:
        ConsistencyError: Labels read from the files fall outside the classes
            the manifest declares for the split.
    """
    try:
        entry = manifest.splits[split]
    except KeyError:
        raise DataFormatError(f"manifest has no split '{split}' (has {sorted(manifest.splits)})")
    frames = target_frames or manifest.frames or oneshot_settings.TARGET_FRAMES
    audio = [canonicalize_sequence(seq, frames) for seq in read_feature_archive(manifest.resolve(entry.audio_path))]
    images_path = manifest.resolve(entry.images_path)
    raw = _read_bytes(images_path)
    count = _idx_header(raw, IDX_IMAGE_MAGIC, 3, images_path)[0]
    labels = read_idx_labels(manifest.resolve(entry.labels_path), expected_count=count)
    images = [normalize_pixels(img, 255.0) for img in read_idx_images(images_path, labels)]
    _check_declared_classes(split, "spoken", (seq.class_id for seq in audio), entry.audio_classes)
    _check_declared_classes(split, "image", labels, entry.image_classes)
    logger.info(f"Loaded split {split}: {len(audio)} utterances, {len(images)} images, {len(entry.pairs)} pairs")
    return PairedDataset(audio=audio, images=images, pairs=entry.pairs, class_table=manifest.class_table)
