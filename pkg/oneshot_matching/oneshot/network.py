"""
Small differentiable networks with hand-derived gradients.

The layer set is closed: affine, relu, conv2d (valid padding, stride 1),
maxpool2d (non-overlapping) and flatten. Tensors are batch-first; convolutional
inputs are (n, channels, height, width), speech enters as (n, 1, dim, frames).
"""
import enum
import hashlib
import json
import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import log_softmax, softmax

from .exceptions import InvalidInputError, TrainingDivergedError

logger = logging.getLogger(__name__)


class LayerKind(str, enum.Enum):
    AFFINE = "affine"
    RELU = "relu"
    CONV2D = "conv2d"
    MAXPOOL2D = "maxpool2d"
    FLATTEN = "flatten"


@dataclass(frozen=True)
class LayerSpec:
    """
    One layer and its shape parameters.

    Fields:
        - kind (LayerKind): Layer type.
        - units (int): Output width of an affine layer.
        - filters (int): Filter count of a conv2d layer.
        - kernel (tuple): (height, width) of a conv2d filter.
        - pool (tuple): (height, width) of a maxpool2d window; a width of 0
          pools over everything that remains along that axis.
    """

    kind: LayerKind
    units: int = 0
    filters: int = 0
    kernel: Tuple[int, int] = (0, 0)
    pool: Tuple[int, int] = (0, 0)

    def __post_init__(self):
        object.__setattr__(self, "kind", LayerKind(self.kind))
        object.__setattr__(self, "kernel", tuple(self.kernel))
        object.__setattr__(self, "pool", tuple(self.pool))

    def as_dict(self) -> dict:
        return {"kind": self.kind.value, "units": self.units, "filters": self.filters,
                "kernel": list(self.kernel), "pool": list(self.pool)}


def affine(units: int) -> LayerSpec:
    return LayerSpec(LayerKind.AFFINE, units=units)


def relu() -> LayerSpec:
    return LayerSpec(LayerKind.RELU)


def conv2d(filters: int, kernel: Tuple[int, int]) -> LayerSpec:
    return LayerSpec(LayerKind.CONV2D, filters=filters, kernel=kernel)


def maxpool2d(pool: Tuple[int, int]) -> LayerSpec:
    return LayerSpec(LayerKind.MAXPOOL2D, pool=pool)


def flatten() -> LayerSpec:
    return LayerSpec(LayerKind.FLATTEN)


def _layer_output_shape(layer: LayerSpec, shape: Tuple[int, ...]) -> Tuple[int, ...]:
    kind = layer.kind
    if kind is LayerKind.RELU:
        return shape
    if kind is LayerKind.FLATTEN:
        return (int(np.prod(shape)),)
    if kind is LayerKind.AFFINE:
        if len(shape) != 1 or layer.units < 1:
            raise InvalidInputError(f"affine layer needs a flat input and units >= 1, got {shape}")
        return (layer.units,)
    if len(shape) != 3:
        raise InvalidInputError(f"{kind.value} needs a (channels, height, width) input, got {shape}")
    channels, height, width = shape
    if kind is LayerKind.CONV2D:
        kh, kw = layer.kernel
        if layer.filters < 1 or not (1 <= kh <= height and 1 <= kw <= width):
            raise InvalidInputError(f"conv2d kernel {layer.kernel} does not fit input {shape}")
        return (layer.filters, height - kh + 1, width - kw + 1)
    ph, pw = _pool_size(layer, shape)
    if not (1 <= ph <= height and 1 <= pw <= width):
        raise InvalidInputError(f"maxpool2d window {layer.pool} does not fit input {shape}")
    return (channels, height // ph, width // pw)


def _pool_size(layer: LayerSpec, shape: Tuple[int, ...]) -> Tuple[int, int]:
    ph, pw = layer.pool
    return (ph or shape[-2], pw or shape[-1])


@dataclass(frozen=True)
class NetworkSpec:
    """
    Layer stack plus the index of the layer whose output is the embedding.

    ``head_classes`` is set for classifiers, whose last layer produces logits.
    """

    input_shape: Tuple[int, ...]
    layers: Tuple[LayerSpec, ...]
    embedding_layer: int = -1
    head_classes: int = 0
    name: str = "network"
    shapes: Tuple[Tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise InvalidInputError("a network needs at least one layer")
        embedding = self.embedding_layer % len(self.layers)
        object.__setattr__(self, "embedding_layer", embedding)
        shapes = [self.input_shape]
        for layer in self.layers:
            shapes.append(_layer_output_shape(layer, shapes[-1]))
        object.__setattr__(self, "shapes", tuple(shapes))

    @property
    def output_shape(self) -> Tuple[int, ...]:
        return self.shapes[-1]

    @property
    def embedding_dim(self) -> int:
        return int(np.prod(self.shapes[self.embedding_layer + 1]))

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "input_shape": list(self.input_shape),
            "layers": [layer.as_dict() for layer in self.layers],
            "embedding_layer": self.embedding_layer,
            "head_classes": self.head_classes,
        }

    def digest(self) -> bytes:
        """SHA-256 over the canonical JSON form; checkpoints are bound to it."""
        payload = json.dumps(self.as_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(payload).digest()


@dataclass(frozen=True, eq=False)
class NetworkParams:
    """Per-layer tensors: {"W", "b"} for affine/conv2d layers, {} otherwise."""

    tensors: Tuple[dict, ...]

    def named(self) -> List[Tuple[int, str, np.ndarray]]:
        return [(index, name, layer[name])
                for index, layer in enumerate(self.tensors)
                for name in sorted(layer)]

    def map(self, fn) -> "NetworkParams":
        return NetworkParams(tuple({name: fn(value) for name, value in layer.items()}
                                   for layer in self.tensors))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(value)) for _, _, value in self.named())


def init_params(spec: NetworkSpec, seed: int = 0, dtype=np.float64) -> NetworkParams:
    """Uniform in +-sqrt(6 / (fan_in + fan_out)) per weighted layer; zero biases."""
    rng = np.random.default_rng(seed)
    tensors = []
    for layer, shape in zip(spec.layers, spec.shapes):
        if layer.kind is LayerKind.AFFINE:
            fan_in, fan_out = shape[0], layer.units
            weight_shape = (fan_in, layer.units)
            bias = np.zeros(layer.units, dtype=dtype)
        elif layer.kind is LayerKind.CONV2D:
            kh, kw = layer.kernel
            fan_in, fan_out = shape[0] * kh * kw, layer.filters * kh * kw
            weight_shape = (layer.filters, shape[0], kh, kw)
            bias = np.zeros(layer.filters, dtype=dtype)
        else:
            tensors.append({})
            continue
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights = rng.uniform(-limit, limit, size=weight_shape).astype(dtype)
        tensors.append({"W": weights, "b": bias})
    return NetworkParams(tuple(tensors))


@dataclass(frozen=True, eq=False)
class ForwardPass:
    """Per-layer inputs and auxiliary caches kept for backward."""

    inputs: Tuple[np.ndarray, ...]
    caches: Tuple[object, ...]
    output: np.ndarray


def _conv_forward(x, weights, bias):
    kh, kw = weights.shape[2:]
    windows = sliding_window_view(x, (kh, kw), axis=(2, 3))
    out = np.einsum("nchwij,fcij->nfhw", windows, weights, optimize=True)
    return out + bias[None, :, None, None]


def _conv_backward(x, weights, grad_out):
    kh, kw = weights.shape[2:]
    windows = sliding_window_view(x, (kh, kw), axis=(2, 3))
    grad_w = np.einsum("nchwij,nfhw->fcij", windows, grad_out, optimize=True)
    grad_b = grad_out.sum(axis=(0, 2, 3))
    grad_x = np.zeros_like(x)
    out_h, out_w = grad_out.shape[2:]
    for i in range(kh):
        for j in range(kw):
            grad_x[:, :, i:i + out_h, j:j + out_w] += np.einsum(
                "nfhw,fc->nchw", grad_out, weights[:, :, i, j], optimize=True)
    return grad_w, grad_b, grad_x


def _pool_windows(x, ph, pw):
    n, c, h, w = x.shape
    out_h, out_w = h // ph, w // pw
    cropped = x[:, :, :out_h * ph, :out_w * pw]
    return (cropped.reshape(n, c, out_h, ph, out_w, pw)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, out_h, out_w, ph * pw))


def _pool_forward(x, ph, pw):
    windows = _pool_windows(x, ph, pw)
    # first maximum wins, so a gradient flows into exactly one cell per window
    winners = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, winners[..., None], axis=-1)[..., 0]
    return out, winners


def _pool_backward(x, ph, pw, winners, grad_out):
    n, c, out_h, out_w = grad_out.shape
    routed = np.zeros((n, c, out_h, out_w, ph * pw), dtype=grad_out.dtype)
    np.put_along_axis(routed, winners[..., None], grad_out[..., None], axis=-1)
    routed = (routed.reshape(n, c, out_h, out_w, ph, pw)
              .transpose(0, 1, 2, 4, 3, 5)
              .reshape(n, c, out_h * ph, out_w * pw))
    grad_x = np.zeros_like(x)
    grad_x[:, :, :out_h * ph, :out_w * pw] = routed
    return grad_x


def forward(params: NetworkParams, spec: NetworkSpec, batch: np.ndarray,
            upto: Optional[int] = None) -> ForwardPass:
    """
    Run the first ``upto`` layers (all by default) over ``batch``.

    Raises:
        InvalidInputError: ``batch`` does not have shape (n,) + spec.input_shape.
    """
    x = np.asarray(batch)
    if x.ndim != len(spec.input_shape) + 1 or tuple(x.shape[1:]) != spec.input_shape:
        raise InvalidInputError(
            f"batch shape {x.shape} does not match network input {spec.input_shape}")
    if len(params.tensors) != len(spec.layers):
        raise InvalidInputError("parameters were built for a different layer stack")
    count = len(spec.layers) if upto is None else upto
    inputs, caches = [], []
    for layer, tensors, shape in zip(spec.layers[:count], params.tensors, spec.shapes):
        inputs.append(x)
        cache = None
        kind = layer.kind
        if kind is LayerKind.AFFINE:
            x = x @ tensors["W"] + tensors["b"]
        elif kind is LayerKind.RELU:
            x = np.maximum(x, 0.0)
        elif kind is LayerKind.CONV2D:
            x = _conv_forward(x, tensors["W"], tensors["b"])
        elif kind is LayerKind.MAXPOOL2D:
            x, cache = _pool_forward(x, *_pool_size(layer, shape))
        else:
            x = x.reshape(x.shape[0], -1)
        caches.append(cache)
    return ForwardPass(inputs=tuple(inputs), caches=tuple(caches), output=x)


def backward(params: NetworkParams, spec: NetworkSpec, activations: ForwardPass,
             output_gradient: np.ndarray) -> Tuple[NetworkParams, np.ndarray]:
    """
    Backpropagate ``output_gradient`` through the layers recorded in ``activations``.

    Returns:
        tuple: (parameter gradients, gradient with respect to the network input).
    """
    grad = np.asarray(output_gradient, dtype=activations.output.dtype)
    if grad.shape != activations.output.shape:
        raise InvalidInputError(
            f"output gradient shape {grad.shape} does not match the forward output "
            f"{activations.output.shape}; activations are stale")
    count = len(activations.inputs)
    grads: List[dict] = [{name: np.zeros_like(value) for name, value in layer.items()}
                         for layer in params.tensors]
    for index in reversed(range(count)):
        layer, x, cache = spec.layers[index], activations.inputs[index], activations.caches[index]
        tensors = params.tensors[index]
        kind = layer.kind
        if kind is LayerKind.AFFINE:
            grads[index] = {"W": x.T @ grad, "b": grad.sum(axis=0)}
            grad = grad @ tensors["W"].T
        elif kind is LayerKind.RELU:
            grad = grad * (x > 0)
        elif kind is LayerKind.CONV2D:
            grad_w, grad_b, grad = _conv_backward(x, tensors["W"], grad)
            grads[index] = {"W": grad_w, "b": grad_b}
        elif kind is LayerKind.MAXPOOL2D:
            grad = _pool_backward(x, *_pool_size(layer, spec.shapes[index]), cache, grad)
        else:
            grad = grad.reshape(x.shape)
    return NetworkParams(tuple(grads)), grad


def embed(params: NetworkParams, spec: NetworkSpec, batch: np.ndarray,
          chunk_size: int = 256) -> np.ndarray:
    """Output of the embedding layer for every item of ``batch``, as (n, embedding_dim)."""
    batch = np.asarray(batch)
    pieces = []
    for start in range(0, max(len(batch), 1), chunk_size):
        chunk = batch[start:start + chunk_size]
        if len(chunk) == 0:
            break
        output = forward(params, spec, chunk, upto=spec.embedding_layer + 1).output
        pieces.append(output.reshape(len(chunk), -1))
    if not pieces:
        return np.zeros((0, spec.embedding_dim))
    return np.concatenate(pieces)


def softmax_cross_entropy(logits: np.ndarray, labels: Sequence[int]) -> Tuple[float, np.ndarray]:
    """
    Mean negative log-likelihood and its gradient with respect to the logits.

    Raises:
        InvalidInputError: A label outside [0, C).
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    count, classes = logits.shape
    if labels.shape != (count,) or labels.min(initial=0) < 0 or labels.max(initial=0) >= classes:
        raise InvalidInputError(f"labels must be {count} class ids in [0, {classes})")
    log_probs = log_softmax(logits, axis=1)
    rows = np.arange(count)
    loss = -log_probs[rows, labels].mean()
    grad = softmax(logits, axis=1)
    grad[rows, labels] -= 1.0
    return float(loss), grad / count


@dataclass(frozen=True, eq=False)
class AdamState:
    """
    Adam moments plus the step-decayed learning-rate schedule.

    The effective learning rate is ``base_lr * decay ** epoch``, where
    ``epoch`` counts completed epochs.
    """

    first_moments: Tuple[dict, ...]
    second_moments: Tuple[dict, ...]
    step: int = 0
    epoch: int = 0
    base_lr: float = 1e-3
    decay: float = 0.96
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_params(cls, params: NetworkParams, **hyperparams) -> "AdamState":
        zeros = tuple({name: np.zeros_like(value) for name, value in layer.items()}
                      for layer in params.tensors)
        return cls(first_moments=zeros, second_moments=zeros, **hyperparams)

    @property
    def learning_rate(self) -> float:
        return self.base_lr * self.decay ** self.epoch

    def next_epoch(self) -> "AdamState":
        return replace(self, epoch=self.epoch + 1)


def adam_step(params: NetworkParams, grads: NetworkParams,
              state: AdamState) -> Tuple[NetworkParams, AdamState]:
    """
    One bias-corrected Adam update.

    Raises:
        TrainingDivergedError: A gradient or updated parameter is not finite.
    """
    if not grads.is_finite():
        raise TrainingDivergedError(f"non-finite gradient at step {state.step + 1}")
    step = state.step + 1
    lr = state.learning_rate
    correction1 = 1.0 - state.beta1 ** step
    correction2 = 1.0 - state.beta2 ** step
    new_params, new_first, new_second = [], [], []
    for layer, layer_grads, first, second in zip(
            params.tensors, grads.tensors, state.first_moments, state.second_moments):
        if layer.keys() != layer_grads.keys():
            raise InvalidInputError("gradients do not align with parameters")
        updated, m_layer, v_layer = {}, {}, {}
        for name, value in layer.items():
            g = layer_grads[name]
            if g.shape != value.shape:
                raise InvalidInputError(f"gradient shape {g.shape} != parameter shape {value.shape}")
            m = state.beta1 * first[name] + (1.0 - state.beta1) * g
            v = state.beta2 * second[name] + (1.0 - state.beta2) * g * g
            m_hat = m / correction1
            v_hat = v / correction2
            updated[name] = value - lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
            m_layer[name], v_layer[name] = m, v
        new_params.append(updated)
        new_first.append(m_layer)
        new_second.append(v_layer)
    result = NetworkParams(tuple(new_params))
    if not result.is_finite():
        raise TrainingDivergedError(f"parameters became non-finite at step {step}")
    new_state = replace(state, first_moments=tuple(new_first),
                        second_moments=tuple(new_second), step=step)
    return result, new_state
