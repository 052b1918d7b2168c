"""Checkpoint serialization.

The canonical-bytes property does the heavy lifting: save(load(f)) must
reproduce f exactly, which pins the manifest ordering, float formatting,
and payload layout all at once.
"""

import numpy as np
import pytest

from dualmae.checkpoint import (
    CheckpointError,
    MAGIC,
    Progress,
    load_checkpoint,
    save_checkpoint,
)
from dualmae.config import TrainConfig
from dualmae.masking import mask_batch
from dualmae.model import DecoderConfig, EncoderConfig, init_params
from dualmae.optim import AdamW
from dualmae.text import CLS_ID, SEP_ID, TokenSequence, make_batch
from dualmae.training import train_step

ENC = EncoderConfig(layers=1, hidden_dim=16, heads=2, ffn_dim=32, max_len=8, vocab_size=40)
DEC = DecoderConfig(mode="enhanced", layers=1, heads=2)


def _trained_state(steps=2):
    """A model that has actually taken optimizer steps, so moments and the
    mask generator are away from their initial states."""
    train = TrainConfig(mode="enhanced", learning_rate=1e-3, seed=9, epochs=1)
    params = init_params(ENC, DEC, np.random.default_rng([9, 0]))
    opt = AdamW(lr=train.learning_rate, weight_decay=train.weight_decay)
    rng = np.random.default_rng([9, 1])
    gen = np.random.default_rng(5)
    seq = TokenSequence(np.concatenate([[CLS_ID], gen.integers(5, 40, size=5), [SEP_ID]]))
    batch = make_batch([seq])
    for step in range(1, steps + 1):
        train_step(params, opt, train, ENC, DEC, batch, rng, step)
    progress = Progress(step=steps, epoch=0, step_in_epoch=steps)
    return params, train, opt, rng, progress


class TestRoundTrip:
    def test_everything_restores(self, tmp_path):
        params, train, opt, rng, progress = _trained_state()
        path = tmp_path / "model.ckpt"
        rng_preview = rng.bit_generator.state
        save_checkpoint(path, params, train, ENC, DEC, opt, rng, progress, "vocab.txt")
        loaded = load_checkpoint(path)

        assert loaded.train == train
        assert loaded.encoder == ENC
        assert loaded.decoder == DEC
        assert loaded.progress == progress
        assert loaded.vocab_file == "vocab.txt"
        assert loaded.optimizer.step_count == opt.step_count
        for name, tensor in params.items():
            np.testing.assert_array_equal(loaded.params[name].data, tensor.data, err_msg=name)
            for side in (0, 1):
                np.testing.assert_array_equal(
                    loaded.optimizer.moments[name][side], opt.moments[name][side]
                )
        # the restored generator continues the exact stream
        fresh = np.random.default_rng()
        fresh.bit_generator.state = rng_preview
        np.testing.assert_array_equal(loaded.rng.integers(0, 1000, 8), fresh.integers(0, 1000, 8))

    def test_save_load_save_is_byte_identical(self, tmp_path):
        params, train, opt, rng, progress = _trained_state()
        first = tmp_path / "a.ckpt"
        save_checkpoint(first, params, train, ENC, DEC, opt, rng, progress, "vocab.txt")
        loaded = load_checkpoint(first)
        second = tmp_path / "b.ckpt"
        save_checkpoint(
            second, loaded.params, loaded.train, loaded.encoder, loaded.decoder,
            loaded.optimizer, loaded.rng, loaded.progress, loaded.vocab_file,
        )
        assert first.read_bytes() == second.read_bytes()

    def test_awkward_floats_survive(self, tmp_path):
        params, train, opt, rng, progress = _trained_state()
        import dataclasses
        train = dataclasses.replace(train, learning_rate=1.0 / 3.0, weight_decay=0.1 + 0.2)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, params, train, ENC, DEC, opt, rng, progress, "vocab.txt")
        loaded = load_checkpoint(path)
        assert loaded.train.learning_rate == 1.0 / 3.0
        assert loaded.train.weight_decay == 0.1 + 0.2

    def test_fresh_optimizer_saves_zero_moments(self, tmp_path):
        params = init_params(ENC, DEC, np.random.default_rng(0))
        train = TrainConfig(mode="enhanced")
        opt = AdamW(lr=1e-4)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, params, train, ENC, DEC, opt, np.random.default_rng(1),
                        Progress(), "vocab.txt")
        loaded = load_checkpoint(path)
        np.testing.assert_array_equal(
            loaded.optimizer.moments["word_emb"][0], np.zeros((40, 16), dtype=np.float32)
        )


def _rewrite_manifest(path, mutate):
    blob = path.read_bytes()
    newline = blob.index(b"\n")
    manifest_len = int(blob[:newline].split()[1])
    manifest = blob[newline + 1 : newline + 1 + manifest_len].decode()
    payload = blob[newline + 1 + manifest_len :]
    manifest = mutate(manifest)
    raw = manifest.encode()
    path.write_bytes(f"{MAGIC} {len(raw)}\n".encode() + raw + payload)


class TestCorruption:
    def _saved(self, tmp_path):
        params, train, opt, rng, progress = _trained_state()
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, params, train, ENC, DEC, opt, rng, progress, "vocab.txt")
        return path

    def test_wrong_magic(self, tmp_path):
        path = self._saved(tmp_path)
        blob = path.read_bytes()
        path.write_bytes(b"x" + blob[1:])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_not_a_checkpoint_at_all(self, tmp_path):
        path = tmp_path / "model.ckpt"
        path.write_bytes(b"hello world\n")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_truncated_payload(self, tmp_path):
        path = self._saved(tmp_path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-100])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)

    def test_missing_optimizer_state(self, tmp_path):
        path = self._saved(tmp_path)
        _rewrite_manifest(path, lambda m: "\n".join(
            line for line in m.splitlines() if not line.startswith("tensor = opt.m.word_emb ")
        ) + "\n")
        with pytest.raises(CheckpointError, match="missing optimizer state"):
            load_checkpoint(path)

    def test_unknown_dtype_tag(self, tmp_path):
        path = self._saved(tmp_path)
        _rewrite_manifest(path, lambda m: m.replace("tensor = word_emb f4", "tensor = word_emb f2", 1))
        with pytest.raises(CheckpointError, match="dtype"):
            load_checkpoint(path)
