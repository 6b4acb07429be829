"""SGANCKPT/1 binary round-trips and error paths."""

import numpy as np
import pytest

from socialgan.checkpoint import CheckpointError, MAGIC, load_checkpoint, save_checkpoint


class TestRoundTrip:
    def test_mixed_ranks(self, tmp_path):
        entries = {
            "a/w": np.arange(6.0).reshape(2, 3),
            "a/b": np.array([1.0, -2.0]),
            "meta/seed": np.asarray(7.0),
        }
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, entries)
        loaded = load_checkpoint(path)
        assert set(loaded) == set(entries)
        for k, v in entries.items():
            assert loaded[k].shape == np.asarray(v).shape
            assert np.array_equal(loaded[k], v)

    def test_byte_identical_rewrites(self, tmp_path):
        entries = {"w": np.random.default_rng(0).normal(size=(4, 4))}
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(p1, entries)
        save_checkpoint(p2, entries)
        assert p1.read_bytes() == p2.read_bytes()

    def test_magic_header_present(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, {"w": np.zeros(2)})
        assert path.read_bytes().startswith(MAGIC)

    def test_little_endian_payload(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, {"x": np.array([1.0])})
        payload = path.read_bytes()[len(MAGIC) + len(b"x 1\n"):]
        assert payload == np.array([1.0]).astype("<f8").tobytes()


class TestErrors:
    def test_bad_magic(self, tmp_path):
        path = tmp_path / "m.ckpt"
        path.write_bytes(b"NOTACKPT/9\nrest")
        with pytest.raises(CheckpointError, match="SGANCKPT"):
            load_checkpoint(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, {"w": np.zeros((2, 2))})
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)

    def test_whitespace_key_rejected(self, tmp_path):
        with pytest.raises(CheckpointError):
            save_checkpoint(tmp_path / "m.ckpt", {"bad key": np.zeros(1)})
