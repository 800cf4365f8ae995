"""64-bit polynomial evaluation hash over GF(2^64).

The key is cut into 64-bit words ``w_1..w_L`` followed by a word holding the
bit length, and the tag is ``sum_i w_i * s^(L+2-i)`` for a secret point ``s``.
Two different keys of at most ``L`` words collide with probability at most
``(L + 1) / 2^64`` over the choice of ``s``.
"""

from __future__ import annotations

import numba
import numpy as np

@numba.njit(cache=True, nogil=True)
def gf64_mul(a: np.uint64, b: np.uint64) -> np.uint64:
    low = np.uint64(0x1B)  # x^64 = x^4 + x^3 + x + 1
    one = np.uint64(1)
    top = np.uint64(1) << np.uint64(63)
    acc = np.uint64(0)
    for _ in range(64):
        if b & one:
            acc ^= a
        b >>= one
        carry = a & top
        a <<= one
        if carry:
            a ^= low
    return acc


@numba.njit(cache=True, nogil=True)
def _horner(words, point):
    acc = np.uint64(0)
    for i in range(words.size):
        acc = gf64_mul(acc ^ words[i], point)
    return acc


def _words(bits: np.ndarray) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.uint8)
    packed = np.packbits(bits)
    pad = (-len(packed)) % 8
    if pad:
        packed = np.concatenate([packed, np.zeros(pad, dtype=np.uint8)])
    words = packed.view(">u8").astype(np.uint64)
    return np.concatenate([words, np.array([len(bits)], dtype=np.uint64)])


def hash_point(seed: int) -> np.uint64:
    """Derive a nonzero evaluation point from a shared seed."""
    rng = np.random.default_rng([seed, 0x7A6])
    return np.uint64(rng.integers(1, 1 << 64, dtype=np.uint64))


def verify_tag(bits: np.ndarray, seed: int) -> int:
    """Tag of a bit vector under the hash keyed by ``seed``."""
    return int(_horner(_words(bits), hash_point(seed)))


def verify(alice_key: np.ndarray, bob_key: np.ndarray, seed: int) -> tuple[int, int, bool]:
    ta = verify_tag(alice_key, seed)
    tb = verify_tag(bob_key, seed)
    return ta, tb, ta == tb
