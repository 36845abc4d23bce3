"""
Checkpoint I/O - Test Suite
"""

import tempfile
import unittest
from pathlib import Path

import numpy as np

from tools.checkpoint_io import MAGIC, init_model, load_checkpoint, load_model, save_checkpoint
from tools.errors import CheckpointFormatError
from tools.schema_scaffold import load_reference_layout
from tools.tiny_lm import ModelConfig, TinyLM


class TestCheckpointIO(unittest.TestCase):
    """Test saving and loading FDDR1 checkpoints"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)
        self.config = ModelConfig(vocab_size=7, d_model=4, n_layers=1, n_heads=2, max_seq_len=8, seed=2)
        self.model = TinyLM(self.config)
        self.vocab = [f"t{i}" for i in range(7)]

    def tearDown(self):
        self.tmp.cleanup()

    def test_save_and_load(self):
        path = save_checkpoint(self.dir / "m.fddr", self.config, self.model.params, self.vocab)
        config, params, vocab = load_checkpoint(path)
        self.assertEqual(config, self.config)
        self.assertEqual(vocab, self.vocab)
        for name, value in self.model.params.items():
            np.testing.assert_array_equal(params[name], value)

    def test_file_starts_with_magic(self):
        path = save_checkpoint(self.dir / "m.fddr", self.config, self.model.params, self.vocab)
        self.assertTrue(path.read_bytes().startswith(MAGIC))

    def test_bad_magic(self):
        path = self.dir / "bad.fddr"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with self.assertRaises(CheckpointFormatError):
            load_checkpoint(path)

    def test_truncated(self):
        path = save_checkpoint(self.dir / "m.fddr", self.config, self.model.params, self.vocab)
        data = path.read_bytes()
        path.write_bytes(data[:-9])
        with self.assertRaises(CheckpointFormatError):
            load_checkpoint(path)

    def test_trailing_bytes(self):
        path = save_checkpoint(self.dir / "m.fddr", self.config, self.model.params, self.vocab)
        path.write_bytes(path.read_bytes() + b"\x00")
        with self.assertRaises(CheckpointFormatError):
            load_checkpoint(path)

    def test_wrong_shape_on_save(self):
        params = dict(self.model.params)
        params["b_out"] = np.zeros(3)
        with self.assertRaises(CheckpointFormatError):
            save_checkpoint(self.dir / "m.fddr", self.config, params, self.vocab)


class TestModelLoading(unittest.TestCase):
    """Test layout-aware model helpers"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)
        self.layout = load_reference_layout()

    def tearDown(self):
        self.tmp.cleanup()

    def test_init_model_sizes_vocab(self):
        model = init_model(ModelConfig(d_model=8, n_heads=2, n_layers=1), self.layout)
        self.assertEqual(model.config.vocab_size, len(self.layout.vocab))
        self.assertEqual(model.mask_id, self.layout.vocab.mask_id)

    def test_load_model_round_trip(self):
        model = init_model(ModelConfig(d_model=8, n_heads=2, n_layers=1), self.layout)
        path = save_checkpoint(self.dir / "m.fddr", model.config, model.params, list(self.layout.vocab.tokens))
        loaded = load_model(path, self.layout)
        np.testing.assert_array_equal(loaded.params["w_out"], model.params["w_out"])

    def test_vocabulary_mismatch(self):
        model = init_model(ModelConfig(d_model=8, n_heads=2, n_layers=1), self.layout)
        tokens = list(self.layout.vocab.tokens)
        tokens[-1] = "other"
        path = save_checkpoint(self.dir / "m.fddr", model.config, model.params, tokens)
        with self.assertRaises(CheckpointFormatError):
            load_model(path, self.layout)


if __name__ == "__main__":
    unittest.main(verbosity=2)
