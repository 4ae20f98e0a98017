"""Binary tensor snapshots and multi-tensor bundles.

Snapshot record (magic ``SGT1``): rank and extents as little-endian u64,
then the values as little-endian float64 in C order. A bundle file (magic
``SGM1``) prepends a JSON header carrying an arbitrary config echo plus the
ordered parameter names and the byte offset of each record, then concatenates
the records in that order. Both formats round-trip float64 buffers bitwise.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError

TENSOR_MAGIC = b"SGT1"
BUNDLE_MAGIC = b"SGM1"
_U64 = struct.Struct("<Q")


def _read_exact(fp, count: int, what: str) -> bytes:
    buf = fp.read(count)
    if len(buf) != count:
        raise DataError(f"truncated snapshot: expected {count} bytes for {what}, got {len(buf)}")
    return buf


def write_array(fp, arr: np.ndarray) -> int:
    """Append one tensor record to a binary stream; returns bytes written."""
    # asarray, not ascontiguousarray: the latter promotes 0-d arrays to 1-d,
    # and tobytes(order="C") below copies non-contiguous layouts anyway.
    arr = np.asarray(arr, dtype=np.float64)
    fp.write(TENSOR_MAGIC)
    fp.write(_U64.pack(arr.ndim))
    for extent in arr.shape:
        fp.write(_U64.pack(extent))
    payload = arr.astype("<f8", copy=False).tobytes(order="C")
    fp.write(payload)
    return len(TENSOR_MAGIC) + _U64.size * (1 + arr.ndim) + len(payload)


def read_array(fp) -> np.ndarray:
    magic = _read_exact(fp, 4, "magic")
    if magic != TENSOR_MAGIC:
        raise DataError(f"bad tensor magic {magic!r}, expected {TENSOR_MAGIC!r}")
    rank = _U64.unpack(_read_exact(fp, 8, "rank"))[0]
    if rank > 32:
        raise DataError(f"implausible tensor rank {rank}")
    shape = tuple(_U64.unpack(_read_exact(fp, 8, "extent"))[0] for _ in range(rank))
    count = 1
    for extent in shape:
        count *= extent
    payload = _read_exact(fp, count * 8, "values")
    return np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(shape)


def record_size(arr: np.ndarray) -> int:
    return 4 + 8 * (1 + arr.ndim) + 8 * arr.size


def save_snapshot(path: str | Path, arr: np.ndarray) -> None:
    with open(path, "wb") as fp:
        write_array(fp, arr)


def load_snapshot(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fp:
        return read_array(fp)


def save_bundle(path: str | Path, config: dict, named: dict[str, np.ndarray]) -> None:
    """Write a bundle: JSON header (config echo, names, offsets) + records.

    `named` must iterate in the intended serialization order; offsets are
    relative to the first byte after the header.
    """
    names = list(named)
    offsets = []
    cursor = 0
    for name in names:
        offsets.append(cursor)
        cursor += record_size(np.asarray(named[name]))
    header = json.dumps(
        {"format": 1, "config": config, "names": names, "offsets": offsets},
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fp:
        fp.write(BUNDLE_MAGIC)
        fp.write(_U64.pack(len(header)))
        fp.write(header)
        for name in names:
            write_array(fp, named[name])


def load_bundle(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fp:
        magic = _read_exact(fp, 4, "magic")
        if magic != BUNDLE_MAGIC:
            raise DataError(f"bad bundle magic {magic!r}, expected {BUNDLE_MAGIC!r}")
        header_len = _U64.unpack(_read_exact(fp, 8, "header length"))[0]
        try:
            header = json.loads(_read_exact(fp, header_len, "header").decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise DataError(f"unreadable bundle header: {exc}") from exc
        names = header.get("names")
        offsets = header.get("offsets")
        if not isinstance(names, list) or not isinstance(offsets, list) or len(names) != len(offsets):
            raise DataError("bundle header missing a consistent names/offsets manifest")
        base = fp.tell()
        tensors: dict[str, np.ndarray] = {}
        for name, offset in zip(names, offsets):
            if fp.tell() - base != offset:
                raise DataError(f"bundle offset mismatch for {name!r}: header says {offset}, stream is at {fp.tell() - base}")
            tensors[name] = read_array(fp)
    return header.get("config", {}), tensors
