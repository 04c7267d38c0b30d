"""Tests for the weight and visual-context file formats."""

import struct

import pytest
from numpy.testing import assert_array_equal

from src.memvr_engine._io import (
    WEIGHTS_MAGIC,
    deserialize_visual,
    deserialize_weights,
    load_visual,
    load_weights,
    save_weights,
    serialize_visual,
    serialize_weights,
    weights_checksum,
)
from src.memvr_engine.config import ModelConfig
from src.memvr_engine.exceptions import (
    MVBadMagicError,
    MVFileFormatError,
    MVIOError,
    MVTruncatedFileError,
    MVVersionError,
)
from src.memvr_engine.model import synthesize_weights

DEFAULT_SEED_42_SHA256 = "971f9ff32a54b3d5d5be56e0b8ea3544510a231b9cd483e81a0615697bfc411a"


def test_weights_file_round_trip(weights, weights_file):
    loaded = load_weights(weights_file)
    assert loaded.config == weights.config
    for (name, a), (_, b) in zip(weights.parameters(), loaded.parameters()):
        assert_array_equal(a, b, err_msg=name)


def test_weights_header_layout(weights):
    data = serialize_weights(weights)
    magic, version, *header = struct.unpack_from("<8sI7I", data)
    assert magic == WEIGHTS_MAGIC == b"MEMVRTOY"
    assert version == 1
    assert tuple(header) == weights.config.as_header()


def test_checksum_is_stable(tmp_path, config, weights):
    first = save_weights(weights, tmp_path / "a.bin")
    second = save_weights(synthesize_weights(config, 42), tmp_path / "b.bin")
    assert first == second == weights_checksum(weights)
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
    assert weights_checksum(synthesize_weights(config, 43)) != first


def test_bad_magic(weights):
    data = b"NOTMEMVR" + serialize_weights(weights)[8:]
    with pytest.raises(MVBadMagicError) as exc:
        deserialize_weights(data, "w.bin")
    assert exc.value.reason == "bad_magic"
    assert exc.value.path == "w.bin"


def test_version_mismatch(weights):
    data = bytearray(serialize_weights(weights))
    struct.pack_into("<I", data, 8, 2)
    with pytest.raises(MVVersionError):
        deserialize_weights(bytes(data))


def test_truncated_payload(weights):
    data = serialize_weights(weights)
    with pytest.raises(MVTruncatedFileError):
        deserialize_weights(data[:-4])
    with pytest.raises(MVTruncatedFileError):
        deserialize_weights(data + b"\x00\x00\x00\x00")
    with pytest.raises(MVTruncatedFileError):
        deserialize_weights(data[:20])


def test_invalid_header_config(weights):
    data = bytearray(serialize_weights(weights))
    struct.pack_into("<I", data, 12, 1)  # num_layers = 1
    with pytest.raises(MVFileFormatError):
        deserialize_weights(bytes(data))


def test_oversized_sequence_header_rejected_before_allocation(weights):
    data = bytearray(serialize_weights(weights))
    struct.pack_into("<I", data, 36, 1 << 30)  # max_seq_len
    with pytest.raises(MVFileFormatError) as exc:
        deserialize_weights(bytes(data))
    assert "max_seq_len" in str(exc.value)


def test_missing_file_names_path(tmp_path):
    missing = tmp_path / "nope.bin"
    with pytest.raises(MVIOError) as exc:
        load_weights(missing)
    assert str(missing) in str(exc.value)
    assert exc.value.path == str(missing)


def test_visual_file_round_trip(visual, image_file):
    assert_array_equal(load_visual(image_file).tokens, visual.tokens)


def test_visual_file_is_column_major(visual):
    data = serialize_visual(visual)
    first_column = struct.unpack_from(f"<{visual.dim}f", data, 16)
    assert_array_equal(first_column, visual.tokens[:, 0])


def test_visual_file_errors(visual):
    data = serialize_visual(visual)
    with pytest.raises(MVBadMagicError):
        deserialize_visual(b"X" + data[1:])
    with pytest.raises(MVTruncatedFileError):
        deserialize_visual(data[:-1])


def test_default_weights_checksum_is_pinned(tmp_path):
    weights = synthesize_weights(ModelConfig(), 42)
    assert weights_checksum(weights) == DEFAULT_SEED_42_SHA256
    assert save_weights(weights, tmp_path / "default.bin") == DEFAULT_SEED_42_SHA256
    assert (tmp_path / "default.bin").stat().st_size == 9_974_312


def test_save_load_save_is_byte_identical(tmp_path, weights_file):
    again = tmp_path / "again.bin"
    save_weights(load_weights(weights_file), again)
    assert again.read_bytes() == weights_file.read_bytes()
