"""Statistical model of the optical layer.

Alice's per-slot choices come out of :func:`generate_pulses` as column
batches; :class:`Detector` turns them into Bob's click events. Photon
numbers, dark counts and afterpulses are drawn per slot, so the ground-truth
columns on :class:`EventBatch` let tests check the post-processing against
what physically happened.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator, NamedTuple

import numpy as np

from .params import ChannelDetectorParams, ProtocolParams

SIGNAL, DECOY, VACUUM = 0, 1, 2
Z, X = 0, 1

AFTERPULSE_MIN_DELAY = 2
AFTERPULSE_MAX_DELAY = 100

CLICK_PHOTON, CLICK_DARK, CLICK_AFTERPULSE = 0, 1, 2

EVENT_DUMP_DTYPE = np.dtype([("slot", "<u8"), ("detector", "u1")])

_U32 = float(1 << 32)


def _threshold(p: float) -> np.uint32 | int:
    """uint32 cut so that ``draw < cut`` has probability ``p`` (to 2^-32)."""
    return min(int(round(p * _U32)), (1 << 32) - 1) if p < 1.0 else 1 << 32


class PulseRecord(NamedTuple):
    slot_index: int
    intensity: int
    basis: int
    bit: int
    is_stabilization: bool


@dataclass
class PulseBatch:
    """Alice's secret choices for a contiguous run of slots."""

    start_slot: int
    intensity: np.ndarray  # uint8, SIGNAL/DECOY/VACUUM
    basis: np.ndarray  # uint8, Z/X
    bit: np.ndarray  # uint8
    stabilization: np.ndarray  # bool

    def __len__(self) -> int:
        return len(self.intensity)

    @property
    def stop_slot(self) -> int:
        return self.start_slot + len(self)

    @property
    def slots(self) -> np.ndarray:
        return np.arange(self.start_slot, self.stop_slot, dtype=np.int64)

    def records(self) -> Iterator[PulseRecord]:
        for i in range(len(self)):
            yield PulseRecord(
                self.start_slot + i,
                int(self.intensity[i]),
                int(self.basis[i]),
                int(self.bit[i]),
                bool(self.stabilization[i]),
            )


@dataclass
class EventBatch:
    """Bob's detection events for the slots of one pulse batch.

    ``slot``, ``detector`` and ``basis`` are what Bob's electronics see. The
    remaining columns are simulator ground truth and never leave the process.
    """

    start_slot: int
    stop_slot: int
    slot: np.ndarray  # int64, strictly increasing
    detector: np.ndarray  # uint8, doubles as Bob's raw bit
    basis: np.ndarray  # uint8, Bob's measurement basis in that slot
    afterpulse: np.ndarray = field(default=None)  # bool
    dark: np.ndarray = field(default=None)  # bool
    photons: np.ndarray = field(default=None)  # int16, photons Alice emitted

    def __post_init__(self) -> None:
        n = len(self.slot)
        if self.afterpulse is None:
            self.afterpulse = np.zeros(n, dtype=bool)
        if self.dark is None:
            self.dark = np.zeros(n, dtype=bool)
        if self.photons is None:
            self.photons = np.full(n, -1, dtype=np.int16)

    def __len__(self) -> int:
        return len(self.slot)


def generate_pulses(
    params: ProtocolParams,
    count: int,
    rng_seed: int,
    batch_size: int = 1 << 22,
    start_batch: int = 0,
) -> Iterator[PulseBatch]:
    """Yield Alice's choices for ``count`` slots in batches.

    Each batch has its own generator keyed on ``(rng_seed, batch index)`` so a
    stream can be regenerated piecewise by either node.
    """
    if count <= 0:
        raise ValueError("count must be positive")
    p_st = params.prob_stabilization
    cuts = np.cumsum([p_st] + [(1.0 - p_st) * p for p in params.intensity_probs[:2]])
    c_stab, c_sig, c_dec = (_threshold(c) for c in cuts)
    c_z = _threshold(params.prob_z)
    index = start_batch
    start = start_batch * batch_size
    while start < count:
        n = min(batch_size, count - start)
        rng = np.random.default_rng([rng_seed, index])
        r = rng.integers(0, 1 << 32, n, dtype=np.uint64)
        stab = r < c_stab
        intensity = (r >= c_sig).astype(np.uint8) + (r >= c_dec).astype(np.uint8)
        basis = (rng.integers(0, 1 << 32, n, dtype=np.uint64) >= c_z).astype(np.uint8)
        bit = np.unpackbits(rng.integers(0, 256, (n + 7) // 8, dtype=np.uint8))[:n]
        basis[stab] = 0
        bit[stab] = 0
        yield PulseBatch(start, intensity, basis, bit, stab)
        start += n
        index += 1


def _truncated_poisson(rng: np.random.Generator, lam: np.ndarray) -> np.ndarray:
    """Draw from Poisson(lam) conditioned on a value of at least one."""
    u = rng.random(len(lam)) * -np.expm1(-lam)
    out = np.ones(len(lam), dtype=np.int16)
    pmf = lam * np.exp(-lam)
    cdf = pmf.copy()
    k = 1
    active = u > cdf
    while active.any() and k < 60:
        k += 1
        out[active] = k
        pmf = pmf * lam / k
        cdf = cdf + pmf
        active &= u > cdf
    return out


def _bernoulli_positions(rng: np.random.Generator, p: float, n: int) -> np.ndarray:
    """Sorted positions in ``[0, n)`` of a Bernoulli(p) process."""
    if p <= 0.0 or n == 0:
        return np.empty(0, dtype=np.int64)
    if p >= 1.0:
        return np.arange(n, dtype=np.int64)
    out = []
    pos = -1
    expect = int(n * p + 6 * np.sqrt(n * p) + 16)
    while True:
        gaps = rng.geometric(p, size=expect)
        steps = pos + np.cumsum(gaps)
        inside = steps[steps < n]
        out.append(inside)
        if len(inside) < len(steps):
            break
        pos = int(steps[-1])
    return np.concatenate(out).astype(np.int64)


class Detector:
    """Bob's two gated detectors, fed pulse batch by pulse batch.

    Afterpulses can land in the next batch, so the detector keeps the pending
    ones between calls. Feed batches in slot order.
    """

    def __init__(self, params: ProtocolParams, channel: ChannelDetectorParams, rng_seed: int):
        self.params = params
        self.channel = channel
        self.rng_seed = rng_seed
        self._pending_slot = np.empty(0, dtype=np.int64)
        self._pending_det = np.empty(0, dtype=np.uint8)
        self._next_slot: int | None = None
        self._batch_index = 0

    def process(self, pulses: PulseBatch) -> EventBatch:
        if self._next_slot is not None and pulses.start_slot != self._next_slot:
            raise ValueError("pulse batches must be contiguous")
        self._next_slot = pulses.stop_slot
        rng = np.random.default_rng([self.rng_seed, 0x5EED, self._batch_index])
        self._batch_index += 1

        params, ch = self.params, self.channel
        n = len(pulses)
        start = pulses.start_slot
        t = ch.transmittance
        fluxes = np.asarray(params.fluxes)
        flux = fluxes[pulses.intensity]

        bob_basis = (rng.integers(0, 1 << 32, n, dtype=np.uint64) >= _threshold(params.prob_z)).astype(np.uint8)

        # photon clicks: at least one photon survives loss and detector efficiency
        lam = flux * t
        p_click = -np.expm1(-lam)
        u = rng.random(n)
        hit = np.flatnonzero(u < p_click)
        k = _truncated_poisson(rng, lam[hit])
        matched = (bob_basis[hit] == pulses.basis[hit]) & ~pulses.stabilization[hit]
        p_wrong = np.where(matched, ch.misalignment_error, 0.5)
        wrong = rng.binomial(k, p_wrong)
        right = k - wrong
        correct_det = pulses.bit[hit].copy()
        stab_hit = pulses.stabilization[hit]
        correct_det[stab_hit] = rng.integers(0, 2, int(stab_hit.sum()), dtype=np.uint8)
        ph_slot = np.concatenate([hit[right > 0], hit[wrong > 0]])
        ph_det = np.concatenate([correct_det[right > 0], 1 - correct_det[wrong > 0]]).astype(np.uint8)

        # dark counts, independent per detector
        d0 = _bernoulli_positions(rng, ch.dark_count_prob, n)
        d1 = _bernoulli_positions(rng, ch.dark_count_prob, n)

        keys = np.concatenate([ph_slot * 2 + ph_det, d0 * 2, d1 * 2 + 1])
        kinds = np.concatenate(
            [
                np.full(len(ph_slot), CLICK_PHOTON, np.uint8),
                np.full(len(d0) + len(d1), CLICK_DARK, np.uint8),
            ]
        )
        # photon click wins over a dark count on the same detector and gate
        keys, first = np.unique(keys, return_index=True)
        kinds = kinds[first]

        keys, kinds = self._afterpulses(rng, keys, kinds, start, n)

        slot_rel = keys >> 1
        det = (keys & 1).astype(np.uint8)
        ev_slot, idx, counts = np.unique(slot_rel, return_index=True, return_counts=True)
        pick = idx.copy()
        double = counts > 1
        # double clicks resolve to a uniformly random bit
        pick[double] += rng.integers(0, 2, int(double.sum()))
        ev_det = det[pick]
        ev_kind = kinds[pick]

        # emitted photon number: survivors plus an independent Poisson of lost ones
        photons = rng.poisson(flux[ev_slot] * (1.0 - t)).astype(np.int16)
        pos = np.searchsorted(ev_slot, hit)
        in_ev = pos < len(ev_slot)
        in_ev[in_ev] &= ev_slot[pos[in_ev]] == hit[in_ev]
        photons[pos[in_ev]] += k[in_ev]

        return EventBatch(
            start_slot=start,
            stop_slot=start + n,
            slot=ev_slot + start,
            detector=ev_det,
            basis=bob_basis[ev_slot],
            afterpulse=ev_kind == CLICK_AFTERPULSE,
            dark=ev_kind == CLICK_DARK,
            photons=photons,
        )

    def _afterpulses(self, rng, keys, kinds, start, n):
        pa = self.channel.afterpulse_prob
        # pending afterpulses from the previous batch land first
        prel = self._pending_slot - start
        landing = prel < n
        pkeys = prel[landing] * 2 + self._pending_det[landing]
        self._pending_slot = self._pending_slot[~landing]
        self._pending_det = self._pending_det[~landing]
        pkeys = np.unique(pkeys)
        pkeys = pkeys[~np.isin(pkeys, keys, assume_unique=True)]
        all_keys = [keys, pkeys]
        all_kinds = [kinds, np.full(len(pkeys), CLICK_AFTERPULSE, np.uint8)]
        retained = np.union1d(keys, pkeys)
        frontier = retained
        carry_slot, carry_det = [self._pending_slot], [self._pending_det]
        while pa > 0 and len(frontier):
            spawn = frontier[rng.random(len(frontier)) < pa]
            if not len(spawn):
                break
            tgt = (spawn >> 1) + rng.integers(AFTERPULSE_MIN_DELAY, AFTERPULSE_MAX_DELAY + 1, len(spawn))
            tdet = rng.integers(0, 2, len(spawn)).astype(np.int64)
            late = tgt >= n
            carry_slot.append(tgt[late] + start)
            carry_det.append(tdet[late].astype(np.uint8))
            new = np.unique(tgt[~late] * 2 + tdet[~late])
            new = new[~np.isin(new, retained, assume_unique=True)]
            all_keys.append(new)
            all_kinds.append(np.full(len(new), CLICK_AFTERPULSE, np.uint8))
            retained = np.union1d(retained, new)
            frontier = new
        self._pending_slot = np.concatenate(carry_slot)
        self._pending_det = np.concatenate(carry_det)
        keys = np.concatenate(all_keys)
        kinds = np.concatenate(all_kinds)
        order = np.argsort(keys, kind="stable")
        return keys[order], kinds[order]


def detect(
    pulses: Iterable[PulseBatch],
    channel: ChannelDetectorParams,
    rng_seed: int,
    params: ProtocolParams | None = None,
) -> Iterator[EventBatch]:
    """Run pulse batches through the channel and detectors."""
    det = Detector(params or ProtocolParams(), channel, rng_seed)
    for batch in pulses:
        yield det.process(batch)


# ---------------------------------------------------------------------------
# ground truth


@dataclass
class TruthTally:
    """Basis-matched detections split by emitted photon number (0, 1, >=2).

    Arrays are indexed ``[intensity, basis, photon class]``.
    """

    detected: np.ndarray = field(default_factory=lambda: np.zeros((3, 2, 3), dtype=np.int64))
    errors: np.ndarray = field(default_factory=lambda: np.zeros((3, 2, 3), dtype=np.int64))

    def add(self, other: "TruthTally") -> None:
        self.detected += other.detected
        self.errors += other.errors

    @property
    def total(self) -> int:
        return int(self.detected.sum())


def ground_truth_tally(pulses: Iterable[PulseBatch], events: Iterable[EventBatch]) -> TruthTally:
    tally = TruthTally()
    for pb, eb in _aligned(pulses, events):
        if len(eb) == 0:
            continue
        if eb.slot[0] < pb.start_slot or eb.slot[-1] >= pb.stop_slot:
            raise ValueError("event slot outside its pulse batch")
        if np.any(eb.photons < 0):
            raise ValueError("events carry no photon-number ground truth")
        rel = eb.slot - pb.start_slot
        keep = ~pb.stabilization[rel] & (pb.basis[rel] == eb.basis)
        rel = rel[keep]
        cls = np.minimum(eb.photons[keep], 2)
        inten = pb.intensity[rel]
        bas = pb.basis[rel]
        err = (eb.detector[keep] != pb.bit[rel]).astype(np.int64)
        np.add.at(tally.detected, (inten, bas, cls), 1)
        np.add.at(tally.errors, (inten, bas, cls), err)
    return tally


def _aligned(pulses: Iterable[PulseBatch], events: Iterable[EventBatch]):
    pit, eit = iter(pulses), iter(events)
    while True:
        pb = next(pit, None)
        eb = next(eit, None)
        if pb is None and eb is None:
            return
        if pb is None or eb is None:
            raise ValueError("pulse and event streams have different lengths")
        if (eb.start_slot, eb.stop_slot) != (pb.start_slot, pb.stop_slot):
            raise ValueError("pulse and event batches are misaligned")
        yield pb, eb


# ---------------------------------------------------------------------------
# raw event dump


def write_events(fh: BinaryIO, batch: EventBatch) -> int:
    rec = np.empty(len(batch), dtype=EVENT_DUMP_DTYPE)
    rec["slot"] = batch.slot
    rec["detector"] = batch.detector
    fh.write(rec.tobytes())
    return len(rec)


def read_events(path: str | Path) -> np.ndarray:
    return np.fromfile(path, dtype=EVENT_DUMP_DTYPE)
