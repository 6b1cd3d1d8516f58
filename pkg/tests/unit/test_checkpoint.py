import struct
from pathlib import Path
from typing import Dict

import numpy as np
import pytest

from fbkws.checkpoint import (
    MAGIC,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    save_checkpoint,
)
from fbkws.exceptions import CheckpointError


@pytest.fixture
def tensors(rng: np.random.Generator) -> Dict[str, np.ndarray]:
    return {
        "frontend.weights": rng.standard_normal((241, 40)),
        "backend.stem.bias": rng.standard_normal(19),
        "norm.mean": np.array(3.5),
    }


def test_round_trip_is_bit_exact(tensors: Dict[str, np.ndarray], tmp_path: Path) -> None:
    # Execute
    path = save_checkpoint(tensors, tmp_path / "nested" / "model.fbkw")
    restored = load_checkpoint(path)

    # Assert
    assert list(restored) == list(tensors)
    for name, values in tensors.items():
        assert restored[name].shape == values.shape
        assert np.array_equal(restored[name], values)


def test_float32_values_are_widened() -> None:
    restored = decode_checkpoint(encode_checkpoint({"w": np.ones(3, dtype=np.float32)}))
    assert restored["w"].dtype == np.float64


def test_header_layout() -> None:
    blob = encode_checkpoint({})
    assert blob[:4] == MAGIC
    assert struct.unpack("<II", blob[4:12]) == (1, 0)
    assert decode_checkpoint(blob) == {}


def test_bad_magic(tensors: Dict[str, np.ndarray]) -> None:
    blob = encode_checkpoint(tensors)
    with pytest.raises(CheckpointError, match="magic"):
        decode_checkpoint(b"XXXX" + blob[4:])


def test_unknown_version() -> None:
    blob = MAGIC + struct.pack("<II", 99, 0)
    with pytest.raises(CheckpointError, match="version"):
        decode_checkpoint(blob)


def test_truncated_payload(tensors: Dict[str, np.ndarray]) -> None:
    blob = encode_checkpoint(tensors)
    for cut in (6, 20, len(blob) - 1):
        with pytest.raises(CheckpointError, match="truncated"):
            decode_checkpoint(blob[:cut])


def test_trailing_bytes(tensors: Dict[str, np.ndarray]) -> None:
    with pytest.raises(CheckpointError, match="trailing"):
        decode_checkpoint(encode_checkpoint(tensors) + b"\x00")


def test_load_reports_corrupt_file(tmp_path: Path) -> None:
    path = tmp_path / "corrupt.fbkw"
    path.write_bytes(b"FBK")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
