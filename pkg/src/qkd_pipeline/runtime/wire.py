"""Length-prefixed frames of the classical channel and their payloads.

Frame: length u32 BE (bytes after the length field), msg_type u8,
frame_seq u64 BE, payload.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

import numpy as np

HEADER = struct.Struct(">IBQ")
HEADER_SIZE = HEADER.size  # 13
_REMAINDER = HEADER_SIZE - 4
MAX_PAYLOAD = 1 << 28


class ProtocolError(Exception):
    pass


class MsgType(enum.IntEnum):
    SIFT_ANNOUNCE = 0x01
    SIFT_REPLY = 0x02
    EC_SYNDROME = 0x03
    EC_VERIFY = 0x04
    PA_SEED = 0x05
    STATS_PING = 0x06
    SHUTDOWN = 0x07
    EC_SAMPLE = 0x08


@dataclass(frozen=True)
class WireFrame:
    msg_type: MsgType
    frame_seq: int
    payload: bytes = b""


def encode_frame(frame: WireFrame) -> bytes:
    if len(frame.payload) > MAX_PAYLOAD:
        raise ProtocolError("payload too large")
    if not 0 <= frame.frame_seq < 1 << 64:
        raise ProtocolError("frame_seq out of range")
    return HEADER.pack(len(frame.payload) + _REMAINDER, int(frame.msg_type), frame.frame_seq) + frame.payload


def frame_size(buf: bytes | bytearray | memoryview) -> int | None:
    """Total size of the frame starting at ``buf`` or None if the header is incomplete."""
    if len(buf) < 4:
        return None
    (length,) = struct.unpack_from(">I", buf)
    if length < _REMAINDER or length - _REMAINDER > MAX_PAYLOAD:
        raise ProtocolError(f"bad frame length {length}")
    return 4 + length


def decode_frame(buf: bytes | bytearray | memoryview) -> tuple[WireFrame, int]:
    """Parse one frame from the start of ``buf``; returns (frame, bytes consumed)."""
    size = frame_size(buf)
    if size is None or len(buf) < size:
        raise ProtocolError("truncated frame")
    _, msg_type, seq = HEADER.unpack_from(buf)
    try:
        kind = MsgType(msg_type)
    except ValueError:
        raise ProtocolError(f"unknown msg_type 0x{msg_type:02X}") from None
    return WireFrame(kind, seq, bytes(buf[HEADER_SIZE:size])), size


# ---------------------------------------------------------------------------
# EC and PA payloads

_BITS = struct.Struct(">QI")
_SYND = struct.Struct(">QHdQI")
_VERIFY = struct.Struct(">QBQ")
_SEED = struct.Struct(">QIIQ")
NO_CODE = 0xFFFF


def _pack_bits(bits: np.ndarray) -> bytes:
    return np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes()


def _unpack_bits(data: bytes, offset: int, nbits: int) -> np.ndarray:
    need = (nbits + 7) // 8
    if len(data) - offset != need:
        raise ProtocolError("bit payload length mismatch")
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8, offset=offset))[:nbits]


def _unpack(st: struct.Struct, data: bytes, exact: bool = True) -> tuple:
    if len(data) < st.size or (exact and len(data) != st.size):
        raise ProtocolError("payload length mismatch")
    return st.unpack_from(data)


def encode_sample(block_id: int, bits: np.ndarray) -> bytes:
    return _BITS.pack(block_id, len(bits)) + _pack_bits(bits)


def decode_sample(data: bytes) -> tuple[int, np.ndarray]:
    block_id, n = _unpack(_BITS, data, exact=False)
    return block_id, _unpack_bits(data, _BITS.size, n)


def encode_syndrome(block_id: int, code_index: int, qber: float, tag: int, syndrome: np.ndarray) -> bytes:
    return _SYND.pack(block_id, code_index, qber, tag, len(syndrome)) + _pack_bits(syndrome)


def decode_syndrome(data: bytes) -> tuple[int, int, float, int, np.ndarray]:
    block_id, code_index, qber, tag, n = _unpack(_SYND, data, exact=False)
    return block_id, code_index, qber, tag, _unpack_bits(data, _SYND.size, n)


def encode_verify(block_id: int, ok: bool, tag: int) -> bytes:
    return _VERIFY.pack(block_id, int(ok), tag)


def decode_verify(data: bytes) -> tuple[int, bool, int]:
    block_id, ok, tag = _unpack(_VERIFY, data)
    return block_id, bool(ok), tag


def encode_seed(frame_id: int, n: int, m: int, seed_id: int) -> bytes:
    return _SEED.pack(frame_id, n, m, seed_id)


def decode_seed(data: bytes) -> tuple[int, int, int, int]:
    return _unpack(_SEED, data)
