"""Basis reconciliation and decoy statistics.

Bob announces his detections (slot and measurement basis) for a range of
slots; Alice answers with one label byte per detection and the number of
pulses she sent per intensity and basis over that range. The label carries
the intensity, whether the bases matched, and for matched X-basis detections
Alice's bit, so the X basis is fully disclosed in the same pass.

Label byte layout: bits 0-1 intensity (3 = stabilization slot), bit 2 basis
match, bit 3 Alice's disclosed X bit.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

from .params import ChannelDetectorParams, ProtocolParams, detection_probability, sifting_efficiency
from .photonic import SIGNAL, X, Z, EventBatch, PulseBatch

MAX_ANNOUNCE = 1 << 16
LABEL_STABILIZATION = 3
_MATCH = 0x04
_XBIT = 0x08
_MAX_DELTA = (1 << 32) - 1


@dataclass
class DecoyTally:
    """Counts indexed ``[intensity, basis]``.

    ``sent`` counts Alice's pulses, ``detected`` the basis-matched detections
    and ``errors`` the wrong bits among them. Z-basis errors are never
    disclosed by the protocol; only the in-process oracle fills them.
    """

    sent: np.ndarray = field(default_factory=lambda: np.zeros((3, 2), dtype=np.int64))
    detected: np.ndarray = field(default_factory=lambda: np.zeros((3, 2), dtype=np.int64))
    errors: np.ndarray = field(default_factory=lambda: np.zeros((3, 2), dtype=np.int64))

    def add(self, other: "DecoyTally") -> None:
        self.sent += other.sent
        self.detected += other.detected
        self.errors += other.errors

    def copy(self) -> "DecoyTally":
        return DecoyTally(self.sent.copy(), self.detected.copy(), self.errors.copy())

    def check(self) -> None:
        if np.any(self.detected > self.sent) or np.any(self.errors > self.detected):
            raise ValueError("inconsistent tally")

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("sent", "detected", "errors")}

    @classmethod
    def from_dict(cls, d: dict) -> "DecoyTally":
        return cls(*(np.asarray(d[k], dtype=np.int64) for k in ("sent", "detected", "errors")))


@dataclass
class SiftedBlock:
    """Z-basis signal-intensity key bits in slot order.

    A node fills only its own side; the in-process :func:`sift` fills both.
    Bits are stored one per byte.
    """

    slot_refs: np.ndarray
    bits_alice: np.ndarray | None = None
    bits_bob: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.slot_refs)


@dataclass
class XBasisDisclosure:
    slots: np.ndarray
    intensity: np.ndarray
    bits_alice: np.ndarray
    bits_bob: np.ndarray

    @property
    def errors(self) -> int:
        return int(np.count_nonzero(self.bits_alice != self.bits_bob))


# ---------------------------------------------------------------------------
# payloads


@dataclass
class Announcement:
    """Bob's detections in ``[start_slot, stop_slot)``."""

    start_slot: int
    stop_slot: int
    slots: np.ndarray  # int64 absolute slot indices
    basis: np.ndarray  # uint8

    def to_bytes(self) -> bytes:
        n = len(self.slots)
        prev = np.concatenate([[self.start_slot], self.slots[:-1]]) if n else np.empty(0, np.int64)
        deltas = (self.slots - prev).astype(">u4")
        return (
            struct.pack(">QQI", self.start_slot, self.stop_slot, n)
            + deltas.tobytes()
            + np.packbits(self.basis.astype(np.uint8)).tobytes()
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "Announcement":
        if len(data) < 20:
            raise ValueError("truncated announcement")
        start, stop, n = struct.unpack_from(">QQI", data)
        need = 20 + 4 * n + (n + 7) // 8
        if len(data) != need:
            raise ValueError("announcement length mismatch")
        deltas = np.frombuffer(data, dtype=">u4", count=n, offset=20).astype(np.int64)
        slots = start + np.cumsum(deltas)
        basis = np.unpackbits(np.frombuffer(data, dtype=np.uint8, offset=20 + 4 * n))[:n]
        if n and (slots[-1] >= stop or np.any(deltas[1:] == 0)):
            raise ValueError("announcement slots out of order or out of range")
        return cls(start, stop, slots, basis)


@dataclass
class Reply:
    labels: np.ndarray  # uint8 per announced detection
    sent: np.ndarray  # (3, 2) pulses Alice sent in the announced range

    def to_bytes(self) -> bytes:
        return (
            struct.pack(">I", len(self.labels))
            + self.labels.astype(np.uint8).tobytes()
            + self.sent.astype(">u8").tobytes()
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "Reply":
        if len(data) < 4:
            raise ValueError("truncated reply")
        (n,) = struct.unpack_from(">I", data)
        if len(data) != 4 + n + 48:
            raise ValueError("reply length mismatch")
        labels = np.frombuffer(data, dtype=np.uint8, count=n, offset=4).copy()
        sent = np.frombuffer(data, dtype=">u8", count=6, offset=4 + n).astype(np.int64).reshape(3, 2)
        return cls(labels, sent)


# ---------------------------------------------------------------------------
# Bob


def announce(events: EventBatch, max_count: int = MAX_ANNOUNCE) -> Iterator[Announcement]:
    """Cut an event batch into announcements covering its whole slot range."""
    slots = events.slot
    n = len(slots)
    start = events.start_slot
    i = 0
    while True:
        j = min(i + max_count, n)
        if j > i:
            # every delta, the first one counted from ``start``, must fit in u32
            prev = np.concatenate([[start], slots[i : j - 1]])
            big = np.flatnonzero(slots[i:j] - prev > _MAX_DELTA)
            if len(big):
                j = i + int(big[0])
        if j == n:
            stop = events.stop_slot
        elif j > i:
            stop = int(slots[j])
        else:
            stop = start + _MAX_DELTA
        yield Announcement(start, stop, slots[i:j], events.basis[i:j])
        if j == n:
            return
        start, i = stop, j


@dataclass
class BobSift:
    key_bits: np.ndarray
    key_slots: np.ndarray
    tally: DecoyTally
    x_slots: np.ndarray
    x_errors: int


def bob_apply(events_bits: np.ndarray, ann: Announcement, reply: Reply) -> BobSift:
    """Bob's side once the reply arrives; ``events_bits`` are his raw bits for ``ann``."""
    if len(reply.labels) != len(ann.slots):
        raise ValueError("reply does not match announcement")
    labels = reply.labels
    intensity = labels & 0x03
    matched = (labels & _MATCH).astype(bool) & (intensity != LABEL_STABILIZATION)
    basis = ann.basis
    bits = np.asarray(events_bits, dtype=np.uint8)
    tally = DecoyTally(sent=reply.sent.astype(np.int64).copy())
    idx = intensity[matched].astype(np.int64) * 2 + basis[matched]
    tally.detected += np.bincount(idx, minlength=6).reshape(3, 2)
    xm = matched & (basis == X)
    x_err = ((labels[xm] >> 3) & 1) != bits[xm]
    tally.errors[:, X] += np.bincount(intensity[xm].astype(np.int64), weights=x_err, minlength=3).astype(np.int64)
    key = matched & (basis == Z) & (intensity == SIGNAL)
    return BobSift(bits[key], ann.slots[key], tally, ann.slots[xm], int(x_err.sum()))


# ---------------------------------------------------------------------------
# Alice


@dataclass
class AliceSift:
    key_bits: np.ndarray
    key_slots: np.ndarray
    reply: Reply


def alice_reply(pulses: PulseBatch, ann: Announcement) -> AliceSift:
    """Label Bob's detections and count the pulses sent in the announced range."""
    if ann.start_slot < pulses.start_slot or ann.stop_slot > pulses.stop_slot:
        raise ValueError("announcement outside the pulse batch")
    rel = ann.slots - pulses.start_slot
    if len(rel) and (rel[0] < 0 or rel[-1] >= len(pulses)):
        raise ValueError("unknown slot index in announcement")
    stab = pulses.stabilization[rel]
    inten = pulses.intensity[rel]
    a_basis = pulses.basis[rel]
    a_bit = pulses.bit[rel]
    matched = (a_basis == ann.basis) & ~stab
    labels = np.where(stab, LABEL_STABILIZATION, inten).astype(np.uint8)
    labels |= np.where(matched, _MATCH, 0).astype(np.uint8)
    xm = matched & (a_basis == X)
    labels[xm] |= (a_bit[xm] << 3).astype(np.uint8)

    lo, hi = ann.start_slot - pulses.start_slot, ann.stop_slot - pulses.start_slot
    keep = ~pulses.stabilization[lo:hi]
    idx = pulses.intensity[lo:hi][keep].astype(np.int64) * 2 + pulses.basis[lo:hi][keep]
    sent = np.bincount(idx, minlength=6).reshape(3, 2).astype(np.int64)

    key = matched & (a_basis == Z) & (inten == SIGNAL)
    return AliceSift(a_bit[key], ann.slots[key], Reply(labels, sent))


# ---------------------------------------------------------------------------
# both sides in one process


def sift(
    alice_pulses: Iterable[PulseBatch], bob_events: Iterable[EventBatch]
) -> tuple[SiftedBlock, DecoyTally, XBasisDisclosure]:
    """Run both halves of the exchange over aligned pulse/event batches.

    The returned tally also carries the Z-basis error counts, which only an
    observer holding both keys can know.
    """
    tally = DecoyTally()
    slots, ka, kb = [], [], []
    xs, xi, xa, xb = [], [], [], []
    for pb, eb in zip(alice_pulses, bob_events, strict=True):
        if (pb.start_slot, pb.stop_slot) != (eb.start_slot, eb.stop_slot):
            raise ValueError("pulse and event batches are misaligned")
        for ann in announce(eb):
            lo = np.searchsorted(eb.slot, ann.slots[0]) if len(ann.slots) else 0
            bob_bits = eb.detector[lo : lo + len(ann.slots)]
            a = alice_reply(pb, ann)
            b = bob_apply(bob_bits, ann, a.reply)
            tally.add(b.tally)
            slots.append(b.key_slots)
            ka.append(a.key_bits)
            kb.append(b.key_bits)
            rel = b.x_slots - pb.start_slot
            xs.append(b.x_slots)
            xi.append(pb.intensity[rel])
            xa.append(pb.bit[rel])
            xb.append(eb.detector[np.searchsorted(eb.slot, b.x_slots)])
            # oracle-only Z error counts
            zrel = ann.slots - pb.start_slot
            zm = (
                ~pb.stabilization[zrel]
                & (pb.basis[zrel] == ann.basis)
                & (ann.basis == Z)
            )
            zerr = bob_bits[zm] != pb.bit[zrel[zm]]
            tally.errors[:, Z] += np.bincount(
                pb.intensity[zrel[zm]].astype(np.int64), weights=zerr, minlength=3
            ).astype(np.int64)
    cat = lambda parts, dt: np.concatenate(parts).astype(dt) if parts else np.empty(0, dt)  # noqa: E731
    block = SiftedBlock(cat(slots, np.int64), cat(ka, np.uint8), cat(kb, np.uint8))
    disclosure = XBasisDisclosure(cat(xs, np.int64), cat(xi, np.uint8), cat(xa, np.uint8), cat(xb, np.uint8))
    return block, tally, disclosure


def sifted_rate(block_bits: int, elapsed_slots: int, clock_rate_hz: float) -> float:
    if elapsed_slots <= 0:
        raise ValueError("elapsed_slots must be positive")
    return block_bits * clock_rate_hz / elapsed_slots


def expected_sifted_fraction(params: ProtocolParams, channel: ChannelDetectorParams) -> float:
    """Analytic sifted bits per slot (stabilization and basis losses included)."""
    return sifting_efficiency(params) * detection_probability(params, channel)
