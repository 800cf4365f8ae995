"""Append-only key store.

Record: frame_id (u64 BE), length in bits (u32 BE), key bytes (bits packed
MSB first), CRC-32 (u32 BE) over everything before it. Each record is
flushed and fsynced before the next, so after a crash the file holds a run
of valid records followed by at most one torn one.
"""

from __future__ import annotations

import os
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

_HEADER = struct.Struct(">QI")
_CRC = struct.Struct(">I")


@dataclass
class KeyRecord:
    frame_id: int
    bits: np.ndarray


def encode_record(frame_id: int, bits: np.ndarray) -> bytes:
    bits = np.asarray(bits, dtype=np.uint8)
    body = _HEADER.pack(frame_id, len(bits)) + np.packbits(bits).tobytes()
    return body + _CRC.pack(zlib.crc32(body))


class KeyStore:
    def __init__(self, path: str | Path, fsync: bool = True):
        self.path = Path(path)
        self.fsync = fsync
        self._fh = open(self.path, "ab")

    def append(self, frame_id: int, bits: np.ndarray) -> None:
        self._fh.write(encode_record(frame_id, bits))
        self._fh.flush()
        if self.fsync:
            os.fsync(self._fh.fileno())

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "KeyStore":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def iter_records(data: bytes) -> Iterator[KeyRecord]:
    """Valid records from the start of ``data``; stops at the first bad one."""
    pos = 0
    while pos + _HEADER.size <= len(data):
        frame_id, nbits = _HEADER.unpack_from(data, pos)
        end = pos + _HEADER.size + (nbits + 7) // 8
        if end + _CRC.size > len(data):
            return
        (crc,) = _CRC.unpack_from(data, end)
        if crc != zlib.crc32(data[pos:end]):
            return
        raw = np.frombuffer(data, dtype=np.uint8, count=end - pos - _HEADER.size, offset=pos + _HEADER.size)
        yield KeyRecord(frame_id, np.unpackbits(raw)[:nbits])
        pos = end + _CRC.size


def read_store(path: str | Path) -> tuple[list[KeyRecord], int]:
    """(valid records, byte length of the valid prefix)."""
    data = Path(path).read_bytes()
    records = list(iter_records(data))
    size = sum(_HEADER.size + (len(r.bits) + 7) // 8 + _CRC.size for r in records)
    return records, size
