"""Weight blob format: 16-byte header plus raw little-endian float32."""
from __future__ import annotations

import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedkd import nn
from fedkd.errors import FormatError

STUDENT_BLOB_BYTES = 57512  # 16 + 4 * 14374
TEACHER_BLOB_BYTES = 225576  # 16 + 4 * 56390


def test_blob_sizes():
    assert nn.weight_blob_bytes(nn.param_count(nn.student_arch())[1]) == STUDENT_BLOB_BYTES
    assert nn.weight_blob_bytes(nn.param_count(nn.teacher_arch())[1]) == TEACHER_BLOB_BYTES


def test_header_layout():
    weights = nn.init_weights(nn.student_arch(), np.random.default_rng(0))
    blob = nn.serialize_weights(weights)
    assert len(blob) == STUDENT_BLOB_BYTES
    assert blob[:4] == b"FKDW"
    version, tensors, params = struct.unpack("<III", blob[4:16])
    assert version == 1
    assert tensors == 8
    assert params == 14374


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_round_trip_is_bit_exact(seed):
    arch = nn.student_arch()
    weights = nn.init_weights(arch, np.random.default_rng(seed))
    restored = nn.deserialize_weights(nn.serialize_weights(weights), arch)
    assert restored.shapes() == weights.shapes()
    for a, b in zip(restored.tensors, weights.tensors):
        np.testing.assert_array_equal(a, b)
    # serialising the restored copy reproduces the same bytes
    assert nn.serialize_weights(restored) == nn.serialize_weights(weights)


def test_serialize_casts_float64_to_float32():
    weights = nn.init_weights(nn.student_arch(), np.random.default_rng(1), dtype=np.float64)
    blob = nn.serialize_weights(weights)
    same = nn.serialize_weights(weights.astype(np.float32))
    assert blob == same


def test_special_values_survive():
    arch = nn.student_arch()
    weights = nn.zeros_like_weights(arch)
    weights.tensors[0].reshape(-1)[:4] = [0.0, -0.0, np.float32(1e-38), np.float32(3.4e38)]
    restored = nn.deserialize_weights(nn.serialize_weights(weights), arch)
    np.testing.assert_array_equal(
        restored.tensors[0].reshape(-1)[:4],
        np.array([0.0, -0.0, 1e-38, 3.4e38], dtype=np.float32),
    )


def test_rejects_bad_magic():
    blob = nn.serialize_weights(nn.zeros_like_weights(nn.student_arch()))
    with pytest.raises(FormatError, match="magic"):
        nn.deserialize_weights(b"XKDW" + blob[4:], nn.student_arch())


def test_rejects_unknown_version():
    blob = nn.serialize_weights(nn.zeros_like_weights(nn.student_arch()))
    bad = blob[:4] + struct.pack("<I", 99) + blob[8:]
    with pytest.raises(FormatError, match="version"):
        nn.deserialize_weights(bad, nn.student_arch())


def test_rejects_truncation_and_padding():
    blob = nn.serialize_weights(nn.zeros_like_weights(nn.student_arch()))
    with pytest.raises(FormatError):
        nn.deserialize_weights(blob[:-1], nn.student_arch())
    with pytest.raises(FormatError):
        nn.deserialize_weights(blob + b"\x00", nn.student_arch())
    with pytest.raises(FormatError):
        nn.deserialize_weights(blob[:10], nn.student_arch())


def test_rejects_architecture_mismatch():
    blob = nn.serialize_weights(nn.zeros_like_weights(nn.teacher_arch()))
    with pytest.raises(FormatError, match="14374"):
        nn.deserialize_weights(blob, nn.student_arch())
