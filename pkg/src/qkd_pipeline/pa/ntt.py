"""Number-theoretic transform over the prime 3 * 2^30 + 1.

Residues fit in 32 bits and a product of two fits in an unsigned 64-bit
word, so butterflies need no wide arithmetic. Transform lengths are powers
of two up to 2^30. The forward pass is decimation in frequency and leaves
its output in bit-reversed order; the inverse pass takes bit-reversed input,
so a convolution never permutes.
"""

from __future__ import annotations

import numba
import numpy as np

PRIME = 3 * (1 << 30) + 1
GENERATOR = 5
MAX_LOG_LENGTH = 30


def root_of_unity(length: int) -> int:
    if length & (length - 1) or not 1 <= length <= 1 << MAX_LOG_LENGTH:
        raise ValueError(f"transform length {length} is not a power of two up to 2^{MAX_LOG_LENGTH}")
    return pow(GENERATOR, (PRIME - 1) // length, PRIME)


@numba.njit(cache=True, nogil=True)
def _fill_twiddles(tw, w, m):
    p = np.uint64(PRIME)
    acc = np.uint64(1)
    for j in range(m):
        tw[j] = acc
        acc = acc * w % p


@numba.njit(cache=True, nogil=True)
def _dif(a, w):
    """In-place forward pass; ``w`` is a primitive ``a.size``-th root of unity."""
    p = np.uint64(PRIME)
    n = a.size
    tw = np.empty(n // 2, dtype=np.uint32)
    w = np.uint64(w)
    m = n // 2
    while m >= 1:
        # twiddles of this stage stored contiguously: w_{2m}^j
        _fill_twiddles(tw, w, m)
        for start in range(0, n, 2 * m):
            for j in range(m):
                u = np.uint64(a[start + j])
                v = np.uint64(a[start + j + m])
                s = u + v
                if s >= p:
                    s -= p
                a[start + j] = s
                d = u - v if u >= v else u + p - v
                a[start + j + m] = d * np.uint64(tw[j]) % p
        w = w * w % p
        m //= 2


@numba.njit(cache=True, nogil=True)
def _dit(a, w):
    """In-place inverse pass (unscaled); ``w`` is the inverse root of unity."""
    p = np.uint64(PRIME)
    n = a.size
    tw = np.empty(n // 2, dtype=np.uint32)
    # stage roots w_{2m} for m = 1, 2, 4, ... are successive squares read backwards
    stages = 0
    while (1 << stages) < n:
        stages += 1
    roots = np.empty(stages, dtype=np.uint64)
    r = np.uint64(w)
    for k in range(stages):
        roots[stages - 1 - k] = r
        r = r * r % p
    m = 1
    k = 0
    while m < n:
        _fill_twiddles(tw, roots[k], m)
        for start in range(0, n, 2 * m):
            for j in range(m):
                u = np.uint64(a[start + j])
                v = np.uint64(a[start + j + m]) * np.uint64(tw[j]) % p
                s = u + v
                if s >= p:
                    s -= p
                a[start + j] = s
                a[start + j + m] = u + p - v if u < v else u - v
        m *= 2
        k += 1


@numba.njit(cache=True, nogil=True)
def _pointwise(a, b):
    p = np.uint64(PRIME)
    for i in range(a.size):
        a[i] = np.uint64(a[i]) * np.uint64(b[i]) % p


@numba.njit(cache=True, nogil=True)
def _scale(a, c):
    p = np.uint64(PRIME)
    c = np.uint64(c)
    for i in range(a.size):
        a[i] = np.uint64(a[i]) * c % p


def _root(length: int, inverse: bool) -> int:
    w = root_of_unity(length)
    return pow(w, PRIME - 2, PRIME) if inverse else w


def ntt_forward(a: np.ndarray) -> np.ndarray:
    """Forward transform (bit-reversed output) of residues in ``[0, PRIME)``."""
    out = np.array(a, dtype=np.uint32)
    if len(out) > 1:
        _dif(out, _root(len(out), False))
    return out


def ntt_inverse(a: np.ndarray) -> np.ndarray:
    """Inverse of :func:`ntt_forward` (bit-reversed input, natural output)."""
    out = np.array(a, dtype=np.uint32)
    n = len(out)
    if n > 1:
        _dit(out, _root(n, True))
        _scale(out, pow(n, PRIME - 2, PRIME))
    return out


def cyclic_convolution(a: np.ndarray, b: np.ndarray, length: int) -> np.ndarray:
    """Cyclic convolution mod PRIME of two non-negative vectors, zero padded to ``length``.

    Inputs are copied into uint32 work arrays, so for ``length = 2^27`` the
    peak extra memory is about 1.25 GiB.
    """
    root_of_unity(length)
    if len(a) > length or len(b) > length:
        raise ValueError("inputs longer than the transform")
    fa = np.zeros(length, dtype=np.uint32)
    fa[: len(a)] = a
    fb = np.zeros(length, dtype=np.uint32)
    fb[: len(b)] = b
    if length == 1:
        return np.array([int(fa[0]) * int(fb[0]) % PRIME], dtype=np.uint32)
    w = _root(length, False)
    _dif(fa, w)
    _dif(fb, w)
    _pointwise(fa, fb)
    del fb
    _dit(fa, _root(length, True))
    _scale(fa, pow(length, PRIME - 2, PRIME))
    return fa
