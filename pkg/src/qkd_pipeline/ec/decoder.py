"""Normalized min-sum syndrome decoding (layered schedule)."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor

import numba
import numpy as np

from .codes import LdpcCode

NORMALIZATION = 0.8
MAX_ITERATIONS = 60


@numba.njit(cache=True, nogil=True)
def _min_sum(chk_ptr, chk_var, llr, synd, alpha, max_iter, post):
    m = chk_ptr.size - 1
    n_edges = chk_var.size
    for v in range(post.size):
        post[v] = llr[v]
    msg = np.zeros(n_edges, dtype=np.float32)
    max_deg = 0
    for c in range(m):
        d = chk_ptr[c + 1] - chk_ptr[c]
        if d > max_deg:
            max_deg = d
    tmp = np.empty(max_deg, dtype=np.float32)
    it = 0
    while True:
        ok = True
        for c in range(m):
            par = synd[c]
            for e in range(chk_ptr[c], chk_ptr[c + 1]):
                if post[chk_var[e]] < 0:
                    par ^= 1
            if par:
                ok = False
                break
        if ok:
            return it
        if it == max_iter:
            return -1
        it += 1
        for c in range(m):
            start = chk_ptr[c]
            stop = chk_ptr[c + 1]
            min1 = np.float32(np.inf)
            min2 = np.float32(np.inf)
            arg = -1
            sgn = synd[c]
            for e in range(start, stop):
                t = post[chk_var[e]] - msg[e]
                tmp[e - start] = t
                a = abs(t)
                if t < 0:
                    sgn ^= 1
                if a < min1:
                    min2 = min1
                    min1 = a
                    arg = e
                elif a < min2:
                    min2 = a
            for e in range(start, stop):
                t = tmp[e - start]
                mag = alpha * (min2 if e == arg else min1)
                neg = sgn
                if t < 0:
                    neg ^= 1
                new = -mag if neg else mag
                msg[e] = new
                post[chk_var[e]] = t + new


def channel_llr(noisy_key: np.ndarray, qber: float, known: np.ndarray | None = None) -> np.ndarray:
    """Log-likelihood ratios log P(x=0)/P(x=1) for a binary symmetric channel."""
    q = min(max(qber, 1e-6), 0.5 - 1e-6)
    mag = np.float32(math.log((1.0 - q) / q))
    llr = np.where(np.asarray(noisy_key, dtype=np.uint8) == 0, mag, -mag).astype(np.float32)
    if known is not None:
        llr[known] = np.where(noisy_key[known] == 0, 1e4, -1e4)
    return llr


def decode(
    code: LdpcCode,
    noisy_key: np.ndarray,
    syndrome: np.ndarray,
    qber_est: float,
    max_iters: int = MAX_ITERATIONS,
    alpha: float = NORMALIZATION,
    known: np.ndarray | None = None,
) -> tuple[np.ndarray | None, int]:
    """Correct ``noisy_key`` towards the word whose syndrome is ``syndrome``.

    Returns ``(bits, iterations)``; ``bits`` is None when decoding did not
    converge within ``max_iters``. ``known`` marks positions both sides share
    (shortened bits); they get near-certain LLRs.
    """
    noisy_key = np.asarray(noisy_key, dtype=np.uint8)
    if noisy_key.shape != (code.n,):
        raise ValueError(f"noisy key must have length {code.n}")
    syndrome = np.asarray(syndrome, dtype=np.uint8)
    if syndrome.shape != (code.m,):
        raise ValueError(f"syndrome must have length {code.m}")
    ptr, var = code.check_csr
    llr = channel_llr(noisy_key, qber_est, known)
    post = np.empty(code.n, dtype=np.float32)
    iters = _min_sum(ptr, var, llr, syndrome, np.float32(alpha), max_iters, post)
    if iters < 0:
        return None, max_iters
    return (post < 0).astype(np.uint8), iters


def decode_many(
    code: LdpcCode,
    noisy_keys: np.ndarray,
    syndromes: np.ndarray,
    qber_est: float,
    max_iters: int = MAX_ITERATIONS,
    workers: int = 1,
    alpha: float = NORMALIZATION,
) -> list[tuple[np.ndarray | None, int]]:
    """Decode independent sub-blocks, optionally on a thread pool.

    The kernel releases the GIL, so threads run truly in parallel and the
    results do not depend on ``workers``.
    """
    jobs = [(code, noisy_keys[i], syndromes[i], qber_est, max_iters, alpha) for i in range(len(noisy_keys))]
    if workers <= 1:
        return [decode(*job) for job in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda job: decode(*job), jobs))
