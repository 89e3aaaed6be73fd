import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from oneshot.architectures import build_network_spec
from oneshot.checkpoints import load_checkpoint, save_checkpoint
from oneshot.exceptions import CheckpointError
from oneshot.network import NetworkParams, init_params


class CheckpointTestCase(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.spec = build_network_spec("cnn", "vision", (1, 8, 8), head_classes=5)
        self.params = init_params(self.spec, seed=9)
        self.path = save_checkpoint(Path(self.tmp.name) / "nested" / "net.ckpt", self.params, self.spec)

    def test_saved_params_load_back(self):
        loaded = load_checkpoint(self.path, self.spec)
        for (i, name, value), (j, other_name, other) in zip(self.params.named(), loaded.named()):
            self.assertEqual((i, name), (j, other_name))
            np.testing.assert_array_equal(other, value.astype(np.float32).astype(np.float64))

    def test_other_spec_is_refused(self):
        other = build_network_spec("cnn", "vision", (1, 8, 8), head_classes=6)
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path, other)

    def test_truncated(self):
        data = self.path.read_bytes()
        self.path.write_bytes(data[:-3])
        with self.assertRaises(CheckpointError) as ctx:
            load_checkpoint(self.path, self.spec)
        self.assertIsNotNone(ctx.exception.offset)

    def test_trailing_bytes(self):
        self.path.write_bytes(self.path.read_bytes() + b"\0")
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path, self.spec)

    def test_bad_magic_and_missing_file(self):
        self.path.write_bytes(b"NOPE" + self.path.read_bytes()[4:])
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path, self.spec)
        with self.assertRaises(CheckpointError):
            load_checkpoint(Path(self.tmp.name) / "missing.ckpt", self.spec)

    def rewrite(self, edit):
        """Save ``self.params`` with ``edit`` applied to the first weighted layer, under the same spec."""
        layers = [dict(layer) for layer in self.params.tensors]
        first = next(index for index, layer in enumerate(layers) if layer)
        edit(layers[first])
        save_checkpoint(self.path, NetworkParams(tuple(layers)), self.spec)
        return first

    def test_missing_tensor(self):
        first = self.rewrite(lambda layer: layer.pop("b"))
        with self.assertRaises(CheckpointError) as ctx:
            load_checkpoint(self.path, self.spec)
        self.assertIn(f"layer {first} 'b'", str(ctx.exception))

    def test_wrong_shape(self):
        self.rewrite(lambda layer: layer.update(W=layer["W"][:-1]))
        with self.assertRaises(CheckpointError) as ctx:
            load_checkpoint(self.path, self.spec)
        self.assertIn("shape", str(ctx.exception))
        self.assertIsNotNone(ctx.exception.offset)

    def test_unknown_tensor(self):
        self.rewrite(lambda layer: layer.update(scale=np.ones(3)))
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path, self.spec)
