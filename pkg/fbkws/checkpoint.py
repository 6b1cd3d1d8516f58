"""
Flat binary parameter checkpoints.

Layout (little-endian):

    magic     4 bytes  b"FBKW"
    version   uint32
    count     uint32
    count × [ name_len uint32 | name utf-8 | rank uint32 | dims uint64 × rank
              | float64 × prod(dims) ]

Values are stored as float64 regardless of the training precision, so a
float64 tensor round-trips bit-exactly.
"""

import logging
import struct
from pathlib import Path
from typing import Dict, Mapping

import numpy as np

from .exceptions import CheckpointError

logger = logging.getLogger(__name__)

MAGIC = b"FBKW"
VERSION = 1


def encode_checkpoint(tensors: Mapping[str, np.ndarray]) -> bytes:
    """Serialize named arrays in insertion order."""
    chunks = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, values in tensors.items():
        encoded = name.encode("utf-8")
        array = np.ascontiguousarray(values, dtype="<f8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}Q", *array.shape))
        chunks.append(array.tobytes())
    return b"".join(chunks)


def decode_checkpoint(blob: bytes) -> Dict[str, np.ndarray]:
    """
    Parse bytes produced by encode_checkpoint.

    Raises:
        CheckpointError: On a wrong magic, unknown version or truncated payload
    """
    if blob[:4] != MAGIC:
        raise CheckpointError("not a checkpoint: bad magic")
    offset = 4

    def take(fmt: str) -> tuple:
        nonlocal offset
        size = struct.calcsize(fmt)
        if offset + size > len(blob):
            raise CheckpointError(f"checkpoint truncated at byte {offset}")
        values = struct.unpack_from(fmt, blob, offset)
        offset += size
        return values

    version, count = take("<II")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")

    tensors: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = take("<I")
        (name_bytes,) = take(f"<{name_len}s")
        (rank,) = take("<I")
        dims = take(f"<{rank}Q") if rank else ()
        n_values = int(np.prod(dims)) if dims else 1
        payload_end = offset + 8 * n_values
        if payload_end > len(blob):
            raise CheckpointError(f"checkpoint truncated in tensor {name_bytes!r}")
        array = np.frombuffer(blob, dtype="<f8", count=n_values, offset=offset)
        tensors[name_bytes.decode("utf-8")] = array.reshape(dims).astype(np.float64)
        offset = payload_end

    if offset != len(blob):
        raise CheckpointError(f"{len(blob) - offset} trailing bytes after {count} tensors")
    return tensors


def save_checkpoint(tensors: Mapping[str, np.ndarray], path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(tensors))
    logger.debug(f"Wrote {len(tensors)} tensors to {path}")
    return path


def load_checkpoint(path: Path) -> Dict[str, np.ndarray]:
    try:
        return decode_checkpoint(Path(path).read_bytes())
    except CheckpointError as e:
        logger.error(f"Failed to load checkpoint {path}: {str(e)}")
        raise
