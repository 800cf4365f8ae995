"""PA frame assembly and compression."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..security import PA_CEILING, SecureLengthResult
from ..sifting import DecoyTally
from .toeplitz import SeedReuse, ToeplitzSeed, toeplitz_ntt


@dataclass
class PAFrame:
    frame_id: int
    corrected_bits: np.ndarray  # uint8, one bit per entry
    block_ids: list[int]
    leak_bits: float  # EC leakage charged to this frame, tags included
    tally: DecoyTally
    error_bits: int | None = None  # Bob only: errors his EC corrected in these bits
    consumed: bool = False

    @property
    def qber(self) -> float | None:
        if self.error_bits is None or len(self.corrected_bits) == 0:
            return None
        return self.error_bits / len(self.corrected_bits)


@dataclass
class KeyMaterial:
    frame_id: int
    bits: np.ndarray


class FrameAssembler:
    """Cut verified EC payloads into frames of exactly ``frame_bits`` bits.

    A payload straddling two frames is split; its leakage (and its corrected
    error count) is charged to each frame in proportion to the bits it gives
    that frame. Tallies are attached to the frame that is open when they
    arrive.
    """

    def __init__(self, frame_bits: int, first_frame_id: int = 0):
        if frame_bits <= 0:
            raise ValueError("frame_bits must be positive")
        self.frame_bits = frame_bits
        self._next_id = first_frame_id
        self._chunks: list[np.ndarray] = []
        self._fill = 0
        self._blocks: list[int] = []
        self._leak = 0.0
        self._errors = 0.0
        self._has_errors = True
        self._tally = DecoyTally()

    @property
    def pending_bits(self) -> int:
        return self._fill

    def add_tally(self, tally: DecoyTally) -> None:
        self._tally.add(tally)

    def add_block(self, block_id: int, key: np.ndarray, leak_bits: float, error_bits: int | None = None) -> list[PAFrame]:
        key = np.asarray(key, dtype=np.uint8)
        out = []
        pos = 0
        total = len(key)
        if error_bits is None:
            self._has_errors = False
        while pos < total:
            take = min(total - pos, self.frame_bits - self._fill)
            share = take / total
            self._chunks.append(key[pos : pos + take])
            self._fill += take
            self._leak += leak_bits * share
            if error_bits is not None:
                self._errors += error_bits * share
            if not self._blocks or self._blocks[-1] != block_id:
                self._blocks.append(block_id)
            pos += take
            if self._fill == self.frame_bits:
                out.append(self._close())
        return out

    def _close(self) -> PAFrame:
        frame = PAFrame(
            frame_id=self._next_id,
            corrected_bits=np.concatenate(self._chunks),
            block_ids=self._blocks,
            leak_bits=self._leak,
            tally=self._tally,
            error_bits=int(round(self._errors)) if self._has_errors else None,
        )
        self._next_id += 1
        self._chunks, self._fill, self._blocks = [], 0, []
        self._leak, self._errors, self._has_errors = 0.0, 0.0, True
        self._tally = DecoyTally()
        return frame


def compress_frame(frame: PAFrame, secure: SecureLengthResult, seed: ToeplitzSeed) -> KeyMaterial:
    """Hash a frame down to its secure length; frame and seed are used up."""
    n = len(frame.corrected_bits)
    m = secure.secure_bits
    if frame.consumed:
        raise RuntimeError(f"frame {frame.frame_id} was already compressed")
    if seed.consumed:
        raise SeedReuse(f"Toeplitz seed {seed.seed_id} was already used")
    if (seed.n, seed.m) != (n, m):
        raise ValueError(f"seed is {seed.m}x{seed.n}, frame needs {m}x{n}")
    if m > n * PA_CEILING:
        raise ValueError("output longer than a third of the input")
    frame.consumed = True
    seed.consumed = True
    bits = toeplitz_ntt(seed, frame.corrected_bits) if m else np.empty(0, dtype=np.uint8)
    return KeyMaterial(frame.frame_id, bits)
