"""
Named network presets for each model family and modality.

``full`` reproduces the published layer lists; ``small`` keeps the same
shape of network at desk scale so tests and synthetic benchmarks run in
minutes.
"""
from typing import List, Optional, Tuple

from .exceptions import ConfigError
from .network import LayerSpec, NetworkSpec, affine, conv2d, flatten, maxpool2d, relu

PRESETS = ("full", "small")
FAMILIES = ("ffnn", "cnn")
MODALITIES = ("speech", "vision")


def _ffnn_body(preset: str) -> List[LayerSpec]:
    if preset == "full":
        widths = (512, 512, 512)
    else:
        widths = (128, 64)
    layers = [flatten()]
    for width in widths:
        layers += [affine(width), relu()]
    return layers


def _speech_cnn_body(preset: str, feature_dim: int) -> List[LayerSpec]:
    if preset == "full":
        return [
            conv2d(128, (feature_dim, 9)), relu(), maxpool2d((1, 3)),
            conv2d(128, (1, 10)), relu(), maxpool2d((1, 0)),
            flatten(), affine(2048), relu(),
        ]
    return [
        conv2d(16, (feature_dim, 5)), relu(), maxpool2d((1, 2)),
        flatten(), affine(64), relu(),
    ]


def _vision_cnn_body(preset: str) -> List[LayerSpec]:
    if preset == "full":
        return [
            conv2d(32, (3, 3)), relu(), maxpool2d((2, 2)),
            conv2d(64, (3, 3)), relu(), maxpool2d((2, 2)),
            conv2d(128, (3, 3)), relu(),
            flatten(), affine(2048), relu(), affine(1024),
        ]
    return [
        conv2d(8, (3, 3)), relu(), maxpool2d((2, 2)),
        flatten(), affine(64), relu(),
    ]


def build_network_spec(family: str, modality: str, input_shape: Tuple[int, ...],
                       preset: str = "small", head_classes: Optional[int] = None) -> NetworkSpec:
    """
    Assemble a classifier (``head_classes`` given) or an embedding network.

    Classifiers embed with the last hidden layer before the softmax head.
    Embedding networks embed with their final layer; a trailing ReLU is
    dropped from the desk-scale presets so embeddings are unconstrained, while
    the full presets keep the published lists verbatim.

    Args:
        family (str): 'ffnn' or 'cnn'.
        modality (str): 'speech' (input (1, dim, frames)) or 'vision' (input (1, H, W)).
        input_shape (tuple): Per-item input shape.
        preset (str): 'full' or 'small'.
        head_classes (int, optional): Softmax output size for classifiers.

    Raises:
        ConfigError: Unknown family, modality or preset.
    """
    if family not in FAMILIES or modality not in MODALITIES or preset not in PRESETS:
        raise ConfigError(f"no preset for family={family!r} modality={modality!r} preset={preset!r}")
    if family == "ffnn":
        layers = _ffnn_body(preset)
    elif modality == "speech":
        layers = _speech_cnn_body(preset, input_shape[1])
    else:
        layers = _vision_cnn_body(preset)

    name = f"{family}-{modality}-{preset}"
    if head_classes:
        if layers[-1].kind.value != "relu":
            layers.append(relu())
        embedding_layer = len(layers) - 1
        layers.append(affine(head_classes))
        return NetworkSpec(input_shape=input_shape, layers=tuple(layers),
                           embedding_layer=embedding_layer, head_classes=head_classes,
                           name=f"{name}-classifier")
    if preset == "small" and layers[-1].kind.value == "relu":
        layers.pop()
    return NetworkSpec(input_shape=input_shape, layers=tuple(layers),
                       embedding_layer=len(layers) - 1, name=f"{name}-embedding")
