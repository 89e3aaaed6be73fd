"""
Parameter checkpoint container.

Layout (all integers little-endian uint32)::

    b"OSCK" | version | 32-byte spec digest | tensor count
    per tensor: layer index | name length | name (utf-8) | ndim | dims... | float32 payload
"""
import logging
import struct
from pathlib import Path
from typing import Union

import numpy as np

from .exceptions import CheckpointError
from .network import NetworkParams, NetworkSpec, init_params

logger = logging.getLogger(__name__)

MAGIC = b"OSCK"
VERSION = 1


def save_checkpoint(path: Union[str, Path], params: NetworkParams, spec: NetworkSpec) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    named = params.named()
    chunks = [MAGIC, struct.pack("<I", VERSION), spec.digest(), struct.pack("<I", len(named))]
    for layer_index, name, value in named:
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<II", layer_index, len(encoded)) + encoded)
        chunks.append(struct.pack("<I", value.ndim) + struct.pack(f"<{value.ndim}I", *value.shape))
        chunks.append(np.ascontiguousarray(value, dtype="<f4").tobytes())
    path.write_bytes(b"".join(chunks))
    logger.info(f"Saved checkpoint for {spec.name} to {path}")
    return path


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.offset = 0

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.data):
            raise CheckpointError("checkpoint is truncated", offset=self.offset)
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def uint32(self, count: int = 1):
        values = struct.unpack(f"<{count}I", self.take(4 * count))
        return values[0] if count == 1 else values


def load_checkpoint(path: Union[str, Path], spec: NetworkSpec) -> NetworkParams:
    """
    Read parameters saved for ``spec``.

    Raises:
        CheckpointError: Bad magic, unknown version, truncation, a spec
            digest that differs from ``spec``, or tensors whose names or
            shapes do not fit it.
    """
    try:
        reader = _Reader(Path(path).read_bytes())
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}")
    if reader.take(4) != MAGIC:
        raise CheckpointError(f"{path} is not a parameter checkpoint", offset=0)
    version = reader.uint32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}", offset=4)
    if reader.take(32) != spec.digest():
        raise CheckpointError(f"{path} was saved for a different network than {spec.name}", offset=8)
    expected = {(index, name): value.shape for index, name, value in init_params(spec).named()}
    tensors = [dict() for _ in spec.layers]
    for _ in range(reader.uint32()):
        start = reader.offset
        layer_index, name_length = reader.uint32(2)
        name = reader.take(name_length).decode("utf-8")
        ndim = reader.uint32()
        shape = tuple(int(dim) for dim in np.atleast_1d(reader.uint32(ndim))) if ndim else ()
        size = int(np.prod(shape)) if shape else 1
        payload = np.frombuffer(reader.take(4 * size), dtype="<f4")
        if (layer_index, name) not in expected:
            raise CheckpointError(f"tensor '{name}' of layer {layer_index} is not part of {spec.name}", offset=start)
        if shape != expected[(layer_index, name)]:
            raise CheckpointError(f"tensor '{name}' of layer {layer_index} has shape {shape}, "
                                  f"{spec.name} needs {expected[(layer_index, name)]}", offset=start)
        tensors[layer_index][name] = payload.reshape(shape).astype(np.float64)
    if reader.offset != len(reader.data):
        raise CheckpointError("trailing bytes after the last tensor", offset=reader.offset)
    missing = sorted(key for key in expected if key[1] not in tensors[key[0]])
    if missing:
        raise CheckpointError(f"{path} lacks tensors for {spec.name}: "
                              + ", ".join(f"layer {index} '{name}'" for index, name in missing))
    return NetworkParams(tuple(tensors))
