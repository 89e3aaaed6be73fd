import numpy as np

from oneshot.data_model import FeatureSequence, ImageGrid, PairedExample, SupportSet
from oneshot.synthetic import SyntheticConfig, generate_synthetic_pairs

TINY = dict(
    background_classes=6,
    oneshot_classes=11,
    speakers=4,
    utterances_per_speaker=2,
    validation_utterances=1,
    feature_dim=4,
    frames=12,
    image_height=8,
    image_width=8,
)


def tiny_config(**overrides) -> SyntheticConfig:
    return SyntheticConfig(**{**TINY, **overrides})


def noiseless_config(**overrides) -> SyntheticConfig:
    """Every instance equals its class prototype."""
    return tiny_config(**{"noise": 0.0, "speaker_offset": 0.0, "length_jitter": 0.0, "image_noise": 0.0,
                          **overrides})


def tiny_corpus(**overrides):
    return generate_synthetic_pairs(tiny_config(**overrides))


def sequence(frames, class_id=0, speaker_id=0, source_index=-1) -> FeatureSequence:
    return FeatureSequence(frames=np.asarray(frames, dtype=np.float64), class_id=class_id,
                           speaker_id=speaker_id, source_index=source_index)


def image(pixels, class_id=0, source_index=-1) -> ImageGrid:
    return ImageGrid(pixels=np.asarray(pixels, dtype=np.float64), class_id=class_id, source_index=source_index)


def one_hot_support(classes, speakers=None) -> SupportSet:
    """One-shot support whose item for class c is a single frame/pixel row marking c."""
    width = max(classes) + 1
    pairs = []
    for position, class_id in enumerate(classes):
        code = np.eye(width)[class_id]
        speaker = speakers[position] if speakers else 0
        pairs.append(PairedExample(
            sequence(code[None, :], class_id, speaker, source_index=position),
            image(code[None, :], class_id, source_index=position),
        ))
    return SupportSet(pairs, ways=len(classes), shots=1)
