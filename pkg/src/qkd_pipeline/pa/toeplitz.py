"""Toeplitz hashing over GF(2), direct and through the NTT.

The ``m x n`` matrix is ``T[i, j] = seed[i - j + n - 1]`` for a seed of
``n + m - 1`` bits, so row ``i`` is the seed window ``seed[i : i + n]`` read
backwards and ``y = T x`` is the slice ``[n - 1, n + m - 1)`` of the linear
convolution ``seed * x``. Every needed output index is at least ``n - 1``,
so a cyclic transform of any length ``L >= n + m - 1`` never wraps into it.
The integer convolution counts at most ``n <= 2^27`` ones, well below the
prime, so its parity is the GF(2) product.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..params import MAX_PA_BITS
from .ntt import cyclic_convolution


class SeedReuse(RuntimeError):
    pass


@dataclass
class ToeplitzSeed:
    bits: np.ndarray  # uint8, n + m - 1 entries
    n: int
    m: int
    seed_id: int | None = None
    consumed: bool = False

    def __post_init__(self) -> None:
        self.bits = np.asarray(self.bits, dtype=np.uint8)
        if self.n <= 0 or self.m < 0:
            raise ValueError("need n > 0 and m >= 0")
        expect = self.n + self.m - 1 if self.m else 0
        if len(self.bits) != expect:
            raise ValueError(f"seed needs {expect} bits, got {len(self.bits)}")

    @classmethod
    def expand(cls, seed_id: int, n: int, m: int) -> "ToeplitzSeed":
        """Deterministic seed bits from a shared integer seed."""
        count = n + m - 1 if m else 0
        rng = np.random.default_rng([seed_id, 0x70E])
        raw = rng.integers(0, 256, (count + 7) // 8, dtype=np.uint8)
        return cls(np.unpackbits(raw)[:count], n, m, seed_id)

    def row(self, i: int) -> np.ndarray:
        return self.bits[i : i + self.n][::-1]


def _check(seed: ToeplitzSeed, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.uint8)
    if x.shape != (seed.n,):
        raise ValueError(f"input has {x.size} bits, seed expects {seed.n}")
    return x


def toeplitz_direct(seed: ToeplitzSeed, x: np.ndarray) -> np.ndarray:
    """Reference product, one explicit row at a time."""
    x = _check(seed, x)
    out = np.empty(seed.m, dtype=np.uint8)
    for i in range(seed.m):
        out[i] = np.count_nonzero(seed.row(i) & x) & 1
    return out


def toeplitz_rows(seed: ToeplitzSeed, x: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Selected output bits, each as an explicit row dot product."""
    x = _check(seed, x)
    return np.array([np.count_nonzero(seed.row(int(i)) & x) & 1 for i in rows], dtype=np.uint8)


def transform_length(n: int, m: int) -> int:
    need = max(n + m - 1, 1)
    return 1 << (need - 1).bit_length()


def toeplitz_ntt(seed: ToeplitzSeed, x: np.ndarray) -> np.ndarray:
    x = _check(seed, x)
    n, m = seed.n, seed.m
    if n > MAX_PA_BITS or n + m - 1 > MAX_PA_BITS:
        raise ValueError(f"input of {n} bits with {m} outputs exceeds 2^27")
    if m == 0:
        return np.empty(0, dtype=np.uint8)
    conv = cyclic_convolution(seed.bits, x, transform_length(n, m))
    return (conv[n - 1 : n + m - 1] & 1).astype(np.uint8)
