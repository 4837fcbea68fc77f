"""Binary tensor container and checkpoint bundle.

Tensor container layout (little-endian throughout):

    magic "PACT" | version u8 | dtype u8 (0=f64, 1=f32) | rank u8
    | dims: rank x u64 | payload row-major | crc32(payload) u32

Label sidecar: one u32 per row, no header. Checkpoint bundles wrap a
JSON meta blob plus named tensor containers in one file; writes are
canonical (sorted keys, fixed separators) so identical state produces
identical bytes.
"""

import json
import struct
import zlib

import numpy as np

from .errors import DataError

MAGIC = b"PACT"
BUNDLE_MAGIC = b"PACB"
VERSION = 1
_DTYPES = {0: np.float64, 1: np.float32}
_CODES = {np.dtype(np.float64): 0, np.dtype(np.float32): 1}


def tensor_bytes(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr)
    code = _CODES.get(arr.dtype)
    if code is None:
        raise DataError(f"unsupported dtype {arr.dtype}; use f64 or f32")
    if arr.ndim < 1 or arr.ndim > 8:
        raise DataError(f"rank {arr.ndim} outside [1, 8]")
    head = MAGIC + struct.pack("<BBB", VERSION, code, arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    payload = arr.tobytes()
    return head + payload + struct.pack("<I", zlib.crc32(payload))


def write_tensor(path, arr: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(tensor_bytes(arr))


def _need(buf: bytes, offset: int, count: int, what: str) -> None:
    if len(buf) < offset + count:
        missing = offset + count - len(buf)
        raise DataError(
            f"truncated container: {what} needs {missing} more byte(s) "
            f"(offset {offset})")


def tensor_from_bytes(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Parse one container from buf at offset; returns (array, end offset)."""
    _need(buf, offset, 7, "header")
    if buf[offset:offset + 4] != MAGIC:
        raise DataError(f"bad magic at offset {offset}: {buf[offset:offset+4]!r}")
    version, code, rank = struct.unpack_from("<BBB", buf, offset + 4)
    if version != VERSION:
        raise DataError(f"unsupported version {version} at offset {offset + 4}")
    if code not in _DTYPES:
        raise DataError(f"unknown dtype code {code} at offset {offset + 5}")
    if rank < 1 or rank > 8:
        raise DataError(f"rank {rank} outside [1, 8] at offset {offset + 6}")
    pos = offset + 7
    _need(buf, pos, 8 * rank, "dims")
    dims = struct.unpack_from(f"<{rank}Q", buf, pos)
    pos += 8 * rank
    dtype = np.dtype(_DTYPES[code])
    count = int(np.prod(dims, dtype=np.int64))
    nbytes = count * dtype.itemsize
    _need(buf, pos, nbytes, "payload")
    payload = buf[pos:pos + nbytes]
    pos += nbytes
    _need(buf, pos, 4, "checksum")
    (crc,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    if zlib.crc32(payload) != crc:
        raise DataError(f"payload checksum mismatch at offset {pos - 4}")
    arr = np.frombuffer(payload, dtype=dtype).reshape(dims).copy()
    return arr, pos


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    arr, end = tensor_from_bytes(buf, 0)
    if end != len(buf):
        raise DataError(f"{len(buf) - end} trailing byte(s) after container")
    return arr


def write_labels(path, labels) -> None:
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise DataError(f"labels must be 1-D, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= 2 ** 32):
        raise DataError("labels outside u32 range")
    with open(path, "wb") as fh:
        fh.write(labels.astype("<u4").tobytes())


def read_labels(path, n_rows: int | None = None) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) % 4:
        raise DataError(f"label sidecar length {len(buf)} not a multiple of 4")
    labels = np.frombuffer(buf, dtype="<u4").astype(np.int64)
    if n_rows is not None and labels.shape[0] != n_rows:
        raise DataError(
            f"label sidecar has {labels.shape[0]} rows, tensor has {n_rows}")
    return labels


def write_bundle(path, meta: dict, tensors: dict[str, np.ndarray]) -> None:
    meta_raw = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(BUNDLE_MAGIC + struct.pack("<B", VERSION))
        fh.write(struct.pack("<Q", len(meta_raw)))
        fh.write(meta_raw)
        fh.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            raw = name.encode()
            fh.write(struct.pack("<H", len(raw)) + raw)
            fh.write(tensor_bytes(tensors[name]))


def read_bundle(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        buf = fh.read()
    _need(buf, 0, 13, "bundle header")
    if buf[:4] != BUNDLE_MAGIC:
        raise DataError(f"bad bundle magic: {buf[:4]!r}")
    (version,) = struct.unpack_from("<B", buf, 4)
    if version != VERSION:
        raise DataError(f"unsupported bundle version {version}")
    (meta_len,) = struct.unpack_from("<Q", buf, 5)
    pos = 13
    _need(buf, pos, meta_len, "bundle meta")
    try:
        meta = json.loads(buf[pos:pos + meta_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"bundle meta is not valid JSON: {exc}") from exc
    pos += meta_len
    _need(buf, pos, 4, "tensor count")
    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    tensors = {}
    for _ in range(count):
        _need(buf, pos, 2, "tensor name length")
        (name_len,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        _need(buf, pos, name_len, "tensor name")
        name = buf[pos:pos + name_len].decode()
        pos += name_len
        tensors[name], pos = tensor_from_bytes(buf, pos)
    if pos != len(buf):
        raise DataError(f"{len(buf) - pos} trailing byte(s) after bundle")
    return meta, tensors
