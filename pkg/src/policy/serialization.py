"""
Binary codec for parameter snapshots (checkpoints and policy bundles).

Layout, all integers little-endian:

    magic          6 bytes   b"FRLFI\\0"
    version        u16
    sign/int/frac  3 x u8    QFormat triple
    n_dims         u16
    dims           n_dims x u32
    round          u32       aggregation round of the snapshot
    count          u32       number of codes
    codes          count x int{8,16,32} in flatten order
    digest         32 bytes  sha256 of everything above
"""
import hashlib
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple

import numpy as np

from src.core.exceptions import CheckpointError, CheckpointIntegrityError
from src.core.logging_config import get_logger
from src.fxp import CodeTensor, QFormat

logger = get_logger(__name__)

MAGIC = b"FRLFI\0"
VERSION = 1
_DIGEST_SIZE = 32


@dataclass(frozen=True)
class CodesFile:
    """Decoded contents of a parameter snapshot file."""
    codes: CodeTensor
    layer_dims: Tuple[int, ...]
    round_index: int
    digest: str


def encode_codes_file(codes: CodeTensor, layer_dims: Tuple[int, ...], round_index: int) -> bytes:
    """
    Serialize a flat code tensor.

    Args:
        codes: Flat parameter codes
        layer_dims: Layer widths of the owning policy
        round_index: Aggregation round the snapshot belongs to

    Returns:
        File bytes including the trailing sha256 digest
    """
    fmt = codes.fmt
    header = MAGIC + struct.pack("<HBBBH", VERSION, fmt.sign_bits, fmt.int_bits, fmt.frac_bits, len(layer_dims))
    header += struct.pack(f"<{len(layer_dims)}I", *layer_dims)
    header += struct.pack("<II", round_index, codes.size)
    body = header + codes.codes.reshape(-1).astype(fmt.storage_dtype).tobytes()
    return body + hashlib.sha256(body).digest()


def decode_codes_file(data: bytes) -> CodesFile:
    """
    Parse and verify a snapshot produced by encode_codes_file.

    Raises:
        CheckpointIntegrityError: On bad magic, version, length or digest
    """
    if len(data) < len(MAGIC) + _DIGEST_SIZE or data[: len(MAGIC)] != MAGIC:
        raise CheckpointIntegrityError("Not a parameter snapshot (bad magic bytes)")

    body, digest = data[:-_DIGEST_SIZE], data[-_DIGEST_SIZE:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointIntegrityError(
            "Snapshot digest mismatch", details=f"stored={digest.hex()[:16]}"
        )

    try:
        offset = len(MAGIC)
        version, sign_bits, int_bits, frac_bits, n_dims = struct.unpack_from("<HBBBH", body, offset)
        offset += struct.calcsize("<HBBBH")
        if version != VERSION:
            raise CheckpointIntegrityError(f"Unsupported snapshot version {version}")
        if sign_bits != 1:
            raise CheckpointIntegrityError(f"Unsupported sign bit count {sign_bits}")
        dims = struct.unpack_from(f"<{n_dims}I", body, offset)
        offset += 4 * n_dims
        round_index, count = struct.unpack_from("<II", body, offset)
        offset += 8
    except struct.error as e:
        raise CheckpointIntegrityError("Truncated snapshot header", details=str(e))

    fmt = QFormat(int_bits=int_bits, frac_bits=frac_bits)
    payload = body[offset:]
    expected = count * np.dtype(fmt.storage_dtype).itemsize
    if len(payload) != expected:
        raise CheckpointIntegrityError(
            f"Snapshot payload is {len(payload)} bytes, expected {expected}"
        )
    raw = np.frombuffer(payload, dtype=fmt.storage_dtype).astype(np.int64)
    codes = CodeTensor(raw, fmt)
    return CodesFile(codes=codes, layer_dims=tuple(dims), round_index=round_index, digest=digest.hex())


def atomic_write_bytes(path: Path, data: bytes) -> None:
    """
    Write a file via a temp file in the same directory and os.replace.

    Raises:
        CheckpointError: If the write or rename fails
    """
    path = Path(path)
    tmp_name = None
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with tempfile.NamedTemporaryFile(dir=path.parent, prefix=f".{path.name}.", delete=False) as tmp:
            tmp_name = tmp.name
            tmp.write(data)
            tmp.flush()
            os.fsync(tmp.fileno())
        os.replace(tmp_name, path)
    except OSError as e:
        if tmp_name and os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise CheckpointError(f"Failed to write {path}", details=str(e)) from e
    logger.debug(f"Wrote {len(data)} bytes to {path}")


def read_codes_file(path: Path) -> CodesFile:
    """
    Read and verify a snapshot file.

    Raises:
        CheckpointError: If the file cannot be read
        CheckpointIntegrityError: If its contents fail verification
    """
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"Failed to read {path}", details=str(e)) from e
    return decode_codes_file(data)
