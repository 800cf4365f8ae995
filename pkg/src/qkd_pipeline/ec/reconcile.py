"""Block-level reconciliation: QBER sampling, rate choice, syndromes, verification.

One EC block is ``2^20`` sifted bits. Both sides drop the same 8192 sample
positions (drawn from shared randomness); Bob discloses his sample bits, Alice
estimates the QBER, picks a code and sends the syndromes of the remaining
payload together with a verification tag. Bob decodes the payload sub-blocks,
compares tags and reports the outcome. Blocks that fail either step are
discarded by both sides.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from ..params import binary_entropy
from .codes import BASE_COLUMNS, LIFT_SIZE, CodeFamily, LdpcCode
from .decoder import MAX_ITERATIONS, NORMALIZATION, decode_many
from .verify import verify_tag

BLOCK_BITS = 1 << 20
SAMPLE_BITS = 8192
VERIFY_BITS = 64
PAYLOAD_BITS = BLOCK_BITS - SAMPLE_BITS
QBER_MARGIN = 0.005
F_TARGET = 1.16
MAX_QBER = 0.11
# base-matrix row counts of the default family: rates 1 - mb/127 from about 0.87 down to 0.55
DEFAULT_ROWS = range(16, 58)


class Status(enum.Enum):
    CORRECTED = "corrected"
    DISCARDED = "discarded"


class NoCodeAvailable(ValueError):
    """The estimated QBER is beyond what the code family can correct."""


@dataclass
class ECBlock:
    """One reconciled (or discarded) block as seen by one node."""

    block_id: int
    qber_estimated: float
    code_rate_selected: float
    syndrome: np.ndarray  # concatenated sub-block syndromes
    verify_tag: int
    status: Status
    leak_bits: int
    f_ec_realized: float | None = None
    key: np.ndarray | None = field(default=None, repr=False)
    block_bits: int = BLOCK_BITS
    est_sample_bits: int = SAMPLE_BITS
    iterations: int = 0
    corrected_errors: int | None = None  # Bob only: bits his decoder flipped

    @property
    def payload_bits(self) -> int:
        return self.block_bits - self.est_sample_bits


def default_family(seed: int = 0) -> CodeFamily:
    """The code family used unless one is loaded from a file."""
    return _cached_family(seed)


_FAMILIES: dict[int, CodeFamily] = {}


def _cached_family(seed: int) -> CodeFamily:
    if seed not in _FAMILIES:
        _FAMILIES[seed] = CodeFamily.build(DEFAULT_ROWS, BASE_COLUMNS, LIFT_SIZE, seed)
    return _FAMILIES[seed]


def sample_positions(seed: int, block_bits: int = BLOCK_BITS, count: int = SAMPLE_BITS) -> np.ndarray:
    """Sorted sample positions both sides derive from the same shared seed."""
    if count > block_bits:
        raise ValueError("sample larger than block")
    rng = np.random.default_rng([seed, 0x5A3])
    return np.sort(rng.choice(block_bits, size=count, replace=False))


def split_sample(bits: np.ndarray, positions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(sample bits, payload with the sample positions removed)."""
    bits = np.asarray(bits, dtype=np.uint8)
    mask = np.ones(len(bits), dtype=bool)
    mask[positions] = False
    return bits[positions], bits[mask]


def estimate_qber(alice_sample: np.ndarray, bob_sample: np.ndarray) -> float:
    a = np.asarray(alice_sample, dtype=np.uint8)
    b = np.asarray(bob_sample, dtype=np.uint8)
    if a.shape != b.shape:
        raise ValueError("sample lengths differ")
    if a.size == 0:
        raise ValueError("empty sample")
    return float(np.count_nonzero(a != b)) / a.size


def rate_bound(qber_est: float, margin: float = QBER_MARGIN, f_target: float = F_TARGET) -> float:
    q = qber_est + margin
    if not (0.0 <= qber_est and q < MAX_QBER):
        raise NoCodeAvailable(f"QBER {qber_est:.4f} + margin {margin:.4f} is not below {MAX_QBER}")
    return 1.0 - f_target * binary_entropy(q)


def select_rate(
    qber_est: float,
    margin: float = QBER_MARGIN,
    f_target: float = F_TARGET,
    family: CodeFamily | None = None,
) -> tuple[LdpcCode, float]:
    """Highest-rate code of the family with rate <= 1 - f_target * h(qber_est + margin)."""
    family = family or default_family()
    bound = rate_bound(qber_est, margin, f_target)
    for code in family.codes:  # highest rate first
        if code.code_rate <= bound + 1e-12:
            return code, code.code_rate
    raise NoCodeAvailable(f"no code with rate <= {bound:.4f}")


def syndrome(code: LdpcCode, key: np.ndarray) -> np.ndarray:
    """H * key for a key made of whole sub-blocks; result is flattened."""
    key = np.asarray(key, dtype=np.uint8)
    if key.ndim != 1 or len(key) % code.n:
        raise ValueError(f"key length {len(key)} is not a multiple of {code.n}")
    return code.syndrome(key.reshape(-1, code.n)).ravel()


def leak_bits(code: LdpcCode, payload_bits: int = PAYLOAD_BITS) -> int:
    return (payload_bits // code.n) * code.m + SAMPLE_BITS + VERIFY_BITS


def realized_efficiency(leak: int, payload_bits: int, true_qber: float) -> float | None:
    h = binary_entropy(true_qber)
    if h == 0.0:
        return None
    return leak / (payload_bits * h)


def block_seeds(session_seed: int, block_id: int) -> tuple[int, int]:
    """(sample seed, hash seed) for one block, from shared randomness."""
    ss = np.random.SeedSequence([session_seed, block_id, 0xEC])
    a, b = ss.generate_state(2, dtype=np.uint64)
    return int(a), int(b)


# ---------------------------------------------------------------------------
# the two sides


@dataclass
class SyndromeMessage:
    block_id: int
    code_index: int
    qber_estimated: float
    syndrome: np.ndarray
    verify_tag: int


class AliceReconciler:
    def __init__(
        self,
        family: CodeFamily | None = None,
        session_seed: int = 0,
        margin: float = QBER_MARGIN,
        f_target: float = F_TARGET,
    ):
        self.family = family or default_family()
        self.session_seed = session_seed
        self.margin = margin
        self.f_target = f_target
        self._pending: dict[int, tuple[np.ndarray, SyndromeMessage | None]] = {}

    def respond(self, block_id: int, block: np.ndarray, bob_sample: np.ndarray) -> SyndromeMessage | None:
        """Answer Bob's sample; None means the block is dropped (no usable code)."""
        sample_seed, hash_seed = block_seeds(self.session_seed, block_id)
        pos = sample_positions(sample_seed, len(block))
        sample, payload = split_sample(block, pos)
        q = estimate_qber(sample, bob_sample)
        try:
            code, _ = select_rate(q, self.margin, self.f_target, self.family)
        except NoCodeAvailable:
            self._pending[block_id] = (payload, None)
            return None
        msg = SyndromeMessage(
            block_id=block_id,
            code_index=self.family.codes.index(code),
            qber_estimated=q,
            syndrome=syndrome(code, payload),
            verify_tag=verify_tag(payload, hash_seed),
        )
        self._pending[block_id] = (payload, msg)
        return msg

    def finish(self, block_id: int, corrected: bool) -> ECBlock:
        payload, msg = self._pending.pop(block_id)
        if msg is None:
            return _dropped(block_id, len(payload) + SAMPLE_BITS)
        code = self.family.codes[msg.code_index]
        return ECBlock(
            block_id=block_id,
            qber_estimated=msg.qber_estimated,
            code_rate_selected=code.code_rate,
            syndrome=msg.syndrome,
            verify_tag=msg.verify_tag,
            status=Status.CORRECTED if corrected else Status.DISCARDED,
            leak_bits=leak_bits(code, len(payload)),
            key=payload if corrected else None,
            block_bits=len(payload) + SAMPLE_BITS,
        )


class BobReconciler:
    def __init__(
        self,
        family: CodeFamily | None = None,
        session_seed: int = 0,
        max_iters: int = MAX_ITERATIONS,
        alpha: float = NORMALIZATION,
        workers: int = 1,
    ):
        self.family = family or default_family()
        self.session_seed = session_seed
        self.max_iters = max_iters
        self.alpha = alpha
        self.workers = workers
        self._pending: dict[int, np.ndarray] = {}

    def sample(self, block_id: int, block: np.ndarray) -> np.ndarray:
        """Bits Bob discloses for QBER estimation."""
        sample_seed, _ = block_seeds(self.session_seed, block_id)
        pos = sample_positions(sample_seed, len(block))
        sample, payload = split_sample(block, pos)
        self._pending[block_id] = payload
        return sample

    def drop(self, block_id: int) -> ECBlock:
        payload = self._pending.pop(block_id)
        return _dropped(block_id, len(payload) + SAMPLE_BITS)

    def correct(self, msg: SyndromeMessage) -> ECBlock:
        payload = self._pending.pop(msg.block_id)
        _, hash_seed = block_seeds(self.session_seed, msg.block_id)
        code = self.family.codes[msg.code_index]
        n_sub = len(payload) // code.n
        if n_sub * code.n != len(payload):
            raise ValueError("payload is not a whole number of sub-blocks")
        results = decode_many(
            code,
            payload.reshape(n_sub, code.n),
            msg.syndrome.reshape(n_sub, code.m),
            msg.qber_estimated + QBER_MARGIN,
            self.max_iters,
            workers=self.workers,
            alpha=self.alpha,
        )
        iters = max(it for _, it in results)
        decoded = all(bits is not None for bits, _ in results)
        key, tag, f_ec, n_err = None, 0, None, None
        leak = leak_bits(code, len(payload))
        if decoded:
            key = np.concatenate([bits for bits, _ in results])
            tag = verify_tag(key, hash_seed)
            if tag == msg.verify_tag:
                # Bob now knows exactly where his copy was wrong
                n_err = int(np.count_nonzero(key != payload))
                f_ec = realized_efficiency(leak, len(payload), n_err / len(payload))
        ok = decoded and tag == msg.verify_tag
        return ECBlock(
            block_id=msg.block_id,
            qber_estimated=msg.qber_estimated,
            code_rate_selected=code.code_rate,
            syndrome=msg.syndrome,
            verify_tag=tag,
            status=Status.CORRECTED if ok else Status.DISCARDED,
            leak_bits=leak,
            f_ec_realized=f_ec,
            key=key if ok else None,
            block_bits=len(payload) + SAMPLE_BITS,
            iterations=iters,
            corrected_errors=n_err if ok else None,
        )


def _dropped(block_id: int, block_bits: int) -> ECBlock:
    return ECBlock(
        block_id=block_id,
        qber_estimated=math.nan,
        code_rate_selected=0.0,
        syndrome=np.empty(0, dtype=np.uint8),
        verify_tag=0,
        status=Status.DISCARDED,
        leak_bits=SAMPLE_BITS,
        block_bits=block_bits,
    )


def reconcile(
    alice_block: np.ndarray,
    bob_block: np.ndarray,
    block_id: int = 0,
    family: CodeFamily | None = None,
    session_seed: int = 0,
    margin: float = QBER_MARGIN,
    f_target: float = F_TARGET,
    workers: int = 1,
) -> tuple[ECBlock, ECBlock]:
    """Run both sides of one block in process; returns (alice, bob) results."""
    family = family or default_family()
    alice = AliceReconciler(family, session_seed, margin, f_target)
    bob = BobReconciler(family, session_seed, workers=workers)
    sample = bob.sample(block_id, bob_block)
    msg = alice.respond(block_id, alice_block, sample)
    if msg is None:
        return alice.finish(block_id, False), bob.drop(block_id)
    b = bob.correct(msg)
    a = alice.finish(block_id, b.status is Status.CORRECTED)
    a.f_ec_realized = b.f_ec_realized
    return a, b
