import struct
import zlib
from collections import OrderedDict

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from patchmixer.checkpoint import (
    Checkpoint,
    CheckpointError,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
)


def sample_checkpoint(rng) -> Checkpoint:
    model = OrderedDict([("a.weight", rng.normal(size=(3, 4)).astype(np.float32)),
                         ("a.bias", np.zeros(4, np.float32)),
                         ("bn.running_var", np.ones(2, np.float32)),
                         ("scalar", np.array(1.5, np.float32))])
    opt = OrderedDict([("a.weight", rng.normal(size=(3, 4)).astype(np.float32))])
    rng_state = {"train": np.random.default_rng(7).bit_generator.state}
    return Checkpoint({"epochs": 3, "nested": {"x": [1, 2]}}, model, opt, 2, rng_state)


def resign(body: bytes) -> bytes:
    """Recompute the CRC so corruption reaches the structural checks."""
    payload = body[4:-4]
    return body[:4] + payload + struct.pack("<I", zlib.crc32(payload))


def test_round_trip(tmp_path, rng):
    ck = sample_checkpoint(rng)
    save_checkpoint(ck, tmp_path / "m.pmx")
    back = load_checkpoint(tmp_path / "m.pmx")
    assert back.config == ck.config and back.epoch == 2 and back.rng_state == ck.rng_state
    assert list(back.model_state) == list(ck.model_state)
    for k in ck.model_state:
        assert np.array_equal(back.model_state[k], ck.model_state[k])
        assert back.model_state[k].shape == ck.model_state[k].shape
    save_checkpoint(back, tmp_path / "again.pmx")
    assert (tmp_path / "m.pmx").read_bytes() == (tmp_path / "again.pmx").read_bytes()


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "nope.pmx")


def test_bad_magic_and_crc(rng):
    buf = encode_checkpoint(sample_checkpoint(rng))
    with pytest.raises(CheckpointError, match="magic"):
        decode_checkpoint(b"PMX2" + buf[4:])
    flipped = bytearray(buf)
    flipped[20] ^= 1
    with pytest.raises(CheckpointError, match="CRC"):
        decode_checkpoint(bytes(flipped))


def test_every_truncation_rejected(rng):
    buf = encode_checkpoint(sample_checkpoint(rng))
    for cut in range(len(buf)):
        with pytest.raises(CheckpointError):
            decode_checkpoint(buf[:cut])


def test_version_and_trailing_bytes(rng):
    buf = encode_checkpoint(sample_checkpoint(rng))
    wrong_version = resign(buf[:4] + struct.pack("<H", 9) + buf[6:])
    with pytest.raises(CheckpointError, match="version"):
        decode_checkpoint(wrong_version)
    trailing = resign(buf[:-4] + b"\x00" + buf[-4:])
    with pytest.raises(CheckpointError, match="trailing"):
        decode_checkpoint(trailing)


@given(st.binary(max_size=64), st.integers(0, 10**6))
def test_resigned_garbage_never_crashes(noise, seed):
    rng = np.random.default_rng(seed)
    buf = bytearray(encode_checkpoint(sample_checkpoint(rng)))
    start = int(rng.integers(4, len(buf) - 4))
    buf[start:start + len(noise)] = noise
    try:
        decode_checkpoint(resign(bytes(buf)))
    except CheckpointError:
        pass
