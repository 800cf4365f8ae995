"""Alice and Bob nodes: sifting, EC and PA stages joined by bounded queues.

Each node runs a router thread that reads the classical channel and hands
messages to per-type inboxes, plus one thread per stage. Bob drives the
exchange: he announces detections, requests reconciliation of each block
and, once a PA frame is complete, fixes its secure length and Toeplitz seed.
Backpressure comes from Bob's bounded queues; Alice only ever follows.
"""

from __future__ import annotations

import logging
import math
import queue
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator

import numpy as np

from ..ec.codes import CodeFamily
from ..ec.reconcile import BLOCK_BITS, AliceReconciler, BobReconciler, ECBlock, Status, SyndromeMessage, default_family
from ..pa.frame import FrameAssembler, PAFrame, compress_frame
from ..pa.keystore import KeyStore
from ..pa.toeplitz import ToeplitzSeed
from ..params import ChannelDetectorParams, ProtocolParams
from ..photonic import Detector, EventBatch, PulseBatch, generate_pulses, write_events
from ..security import EstimationFailure, FrameStats, SecureLengthResult, decoy_bounds, secure_length
from ..sifting import Announcement, DecoyTally, Reply, alice_reply, announce, bob_apply
from . import wire
from .stats import RunStats, StatsWriter, Window
from .transport import Endpoint, InProcessTransport
from .wire import MsgType, ProtocolError

log = logging.getLogger(__name__)

# one large NTT at a time per process keeps loopback memory bounded
_PA_LOCK = threading.Lock()


@dataclass
class RunConfig:
    pulses: int
    session_seed: int = 1  # shared randomness for sampling, hashing and PA seeds
    sim_seed: int = 7  # photonic simulation
    batch_size: int = 1 << 22
    queue_depth: int = 8
    finite_size: bool = True
    family: CodeFamily | None = None
    workers: int = 1
    key_path: str | Path | None = None
    stats_path: str | Path | None = None
    frame_log_path: str | Path | None = None
    dump_events: str | Path | None = None
    max_seconds: float | None = None
    fsync: bool = True


@dataclass
class NodeResult:
    role: str
    status: int = 0
    error: str | None = None
    slots: int = 0
    sifted_bits: int = 0
    blocks: int = 0
    failed_blocks: int = 0
    frames: int = 0
    secure_bits: int = 0
    stats: list[RunStats] = field(default_factory=list)
    frame_records: list[FrameStats] = field(default_factory=list)


class _End:
    """Queue sentinel."""


END = _End()


class Aborted(Exception):
    pass


class _Node:
    role = ""
    inbox_types: tuple[MsgType, ...] = ()

    def __init__(self, params: ProtocolParams, endpoint: Endpoint, config: RunConfig):
        self.params = params
        self.endpoint = endpoint
        self.config = config
        self.family = config.family or default_family()
        self.inbox = {t: queue.Queue() for t in self.inbox_types}
        self.abort = threading.Event()
        self.result = NodeResult(self.role)
        self.stats = StatsWriter(config.stats_path)
        self.store = KeyStore(config.key_path, fsync=config.fsync) if config.key_path else None
        self._threads: list[threading.Thread] = []
        self._error_lock = threading.Lock()

    # -- plumbing -----------------------------------------------------------

    def _get(self, q: queue.Queue):
        while True:
            try:
                return q.get(timeout=0.2)
            except queue.Empty:
                if self.abort.is_set():
                    raise Aborted() from None

    def _put(self, q: queue.Queue, item) -> None:
        while True:
            try:
                q.put(item, timeout=0.2)
                return
            except queue.Full:
                if self.abort.is_set():
                    raise Aborted() from None

    def _recv(self, msg_type: MsgType) -> bytes | None:
        item = self._get(self.inbox[msg_type])
        return None if item is END else item

    def _fail(self, status: int, message: str) -> None:
        with self._error_lock:
            if self.result.error is None:
                self.result.status = status
                self.result.error = message
                log.error("%s: %s", self.role, message)
        self.abort.set()

    def _spawn(self, name: str, fn: Callable[[], None]) -> None:
        def body():
            try:
                fn()
            except Aborted:
                pass
            except ProtocolError as exc:
                self._fail(3, f"protocol violation in {name}: {exc}")
            except Exception as exc:  # noqa: BLE001
                log.exception("%s stage %s failed", self.role, name)
                self._fail(1, f"{name}: {exc!r}")

        t = threading.Thread(target=body, name=f"{self.role}-{name}", daemon=True)
        self._threads.append(t)
        t.start()

    def _router(self) -> None:
        while True:
            try:
                frame = self.endpoint.recv()
            except ProtocolError as exc:
                self._fail(3, f"protocol violation: {exc}")
                break
            if frame is None:
                if not self._finished_ok():
                    self._fail(2, "peer disconnected")
                break
            if frame.msg_type is MsgType.SHUTDOWN:
                self._on_shutdown(frame.payload)
                break
            if frame.msg_type is MsgType.STATS_PING:
                self._on_stats(frame.payload)
                continue
            box = self.inbox.get(frame.msg_type)
            if box is None:
                self._fail(3, f"unexpected {frame.msg_type.name} at {self.role}")
                break
            box.put(frame.payload)
        for box in self.inbox.values():
            box.put(END)

    def _finished_ok(self) -> bool:
        return False

    def _on_shutdown(self, payload: bytes) -> None:
        pass

    def _on_stats(self, payload: bytes) -> None:
        pass

    def _store_key(self, frame_id: int, bits: np.ndarray) -> None:
        if self.store is not None and len(bits):
            self.store.append(frame_id, bits)
        self.result.secure_bits += len(bits)
        self.result.frames += 1

    def _start(self) -> None:
        raise NotImplementedError

    def run(self) -> NodeResult:
        router = threading.Thread(target=self._router, name=f"{self.role}-router", daemon=True)
        router.start()
        try:
            self._start()
            deadline = None
            for t in self._threads:
                while t.is_alive():
                    t.join(timeout=0.5)
                    if self.abort.is_set() and deadline is None:
                        deadline = time.monotonic() + 10.0
                    if deadline is not None and time.monotonic() > deadline:
                        break
        finally:
            if self.result.status != 0:
                # let the peer see the abort instead of waiting forever
                try:
                    self.endpoint.send(MsgType.SHUTDOWN, b"abort")
                except Exception:  # noqa: BLE001
                    pass
            self.endpoint.close()
            self.stats.close()
            if self.store is not None:
                self.store.close()
        self.result.stats = list(self.stats.rows)
        return self.result


# ---------------------------------------------------------------------------
# Bob


class BobNode(_Node):
    role = "bob"
    inbox_types = (MsgType.SIFT_REPLY, MsgType.EC_SYNDROME)

    def __init__(
        self,
        params: ProtocolParams,
        endpoint: Endpoint,
        config: RunConfig,
        events: Iterable[EventBatch],
    ):
        super().__init__(params, endpoint, config)
        self.events = events
        depth = config.queue_depth
        self._outstanding: queue.Queue = queue.Queue(maxsize=depth * 4)
        self._ec_q: queue.Queue = queue.Queue(maxsize=depth)
        self._pa_q: queue.Queue = queue.Queue(maxsize=depth)
        self.reconciler = BobReconciler(self.family, config.session_seed, workers=config.workers)
        self._seed_rng = np.random.default_rng([config.session_seed, 0xB0B])
        self._done = threading.Event()

    def _finished_ok(self) -> bool:
        return self._done.is_set()

    def _on_shutdown(self, payload: bytes) -> None:
        if payload == b"abort":
            self._fail(2, "peer aborted")

    def _start(self) -> None:
        self._spawn("announce", self._announce)
        self._spawn("collect", self._collect)
        self._spawn("ec", self._ec)
        self._spawn("pa", self._pa)

    def _announce(self) -> None:
        dump = open(self.config.dump_events, "wb") if self.config.dump_events else None
        t0 = time.monotonic()
        try:
            for eb in self.events:
                if dump is not None:
                    write_events(dump, eb)
                lo = 0
                for ann in announce(eb):
                    bits = eb.detector[lo : lo + len(ann.slots)]
                    lo += len(ann.slots)
                    self._put(self._outstanding, (ann, bits))
                    self.endpoint.send(MsgType.SIFT_ANNOUNCE, ann.to_bytes())
                self.result.slots = eb.stop_slot
                if self.config.max_seconds is not None and time.monotonic() - t0 > self.config.max_seconds:
                    log.info("wall-clock limit reached")
                    break
                if self.abort.is_set():
                    raise Aborted()
        finally:
            if dump is not None:
                dump.close()
        self._put(self._outstanding, END)

    def _collect(self) -> None:
        chunks: list[np.ndarray] = []
        fill = 0
        tally = DecoyTally()
        block_id = 0
        while True:
            item = self._get(self._outstanding)
            if item is END:
                break
            ann, bits = item
            payload = self._recv(MsgType.SIFT_REPLY)
            if payload is None:
                raise Aborted()
            res = bob_apply(bits, ann, Reply.from_bytes(payload))
            tally.add(res.tally)
            self.result.sifted_bits += len(res.key_bits)
            chunks.append(res.key_bits)
            fill += len(res.key_bits)
            while fill >= BLOCK_BITS:
                allbits = np.concatenate(chunks)
                self._put(self._ec_q, (block_id, allbits[:BLOCK_BITS], tally, ann.stop_slot))
                block_id += 1
                tally = DecoyTally()
                chunks, fill = [allbits[BLOCK_BITS:]], len(allbits) - BLOCK_BITS
        # a partial block never reaches EC; its tally is dropped with it
        self._put(self._ec_q, END)

    def _ec(self) -> None:
        while True:
            item = self._get(self._ec_q)
            if item is END:
                break
            block_id, bits, tally, last_slot = item
            sample = self.reconciler.sample(block_id, bits)
            self.endpoint.send(MsgType.EC_SAMPLE, wire.encode_sample(block_id, sample))
            payload = self._recv(MsgType.EC_SYNDROME)
            if payload is None:
                raise Aborted()
            bid, code_index, qber, tag, synd = wire.decode_syndrome(payload)
            if bid != block_id:
                raise ProtocolError(f"syndrome for block {bid}, expected {block_id}")
            if code_index == wire.NO_CODE:
                ecb = self.reconciler.drop(block_id)
            else:
                if not 0 <= code_index < len(self.family.codes):
                    raise ProtocolError(f"unknown code index {code_index}")
                ecb = self.reconciler.correct(SyndromeMessage(block_id, code_index, qber, synd, tag))
            ok = ecb.status is Status.CORRECTED
            self.endpoint.send(MsgType.EC_VERIFY, wire.encode_verify(block_id, ok, ecb.verify_tag))
            self.result.blocks += 1
            self.result.failed_blocks += not ok
            self._put(self._pa_q, (ecb, tally, last_slot))
        self._put(self._pa_q, END)

    def _pa(self) -> None:
        params = self.params
        asm = FrameAssembler(params.pa_dataset_bits)
        window = Window()
        last_slot = 0
        frame_log = open(self.config.frame_log_path, "w") if self.config.frame_log_path else None
        try:
            while True:
                item = self._get(self._pa_q)
                if item is END:
                    break
                ecb, tally, slot = item
                window.slots += slot - last_slot
                last_slot = slot
                asm.add_tally(tally)
                ok = ecb.status is Status.CORRECTED
                window.add_block(BLOCK_BITS, ok, ecb.f_ec_realized)
                if not ok:
                    continue
                for frame in asm.add_block(ecb.block_id, ecb.key, ecb.leak_bits, ecb.corrected_errors):
                    self._finish_frame(frame, window, frame_log)
                    window = Window()
        finally:
            if frame_log is not None:
                frame_log.close()
        self._done.set()
        self.endpoint.send(MsgType.SHUTDOWN)

    def _finish_frame(self, frame: PAFrame, window: Window, frame_log) -> None:
        params = self.params
        n = len(frame.corrected_bits)
        qber = frame.qber if frame.qber is not None else math.nan
        try:
            bounds = decoy_bounds(frame.tally, params, finite=self.config.finite_size)
            result = secure_length(bounds, qber, frame.leak_bits, 0, params, frame_bits=n)
            n1, e1 = bounds.n1_z_lower, bounds.e1_upper
        except EstimationFailure as exc:
            log.warning("frame %d: estimation failed (%s); discarded", frame.frame_id, exc)
            result = SecureLengthResult(0, 0.0, 0, math.nan, math.nan)
            n1, e1 = math.nan, math.nan
        m = result.secure_bits
        seed_id = int(self._seed_rng.integers(0, 1 << 63))
        self.endpoint.send(MsgType.PA_SEED, wire.encode_seed(frame.frame_id, n, m, seed_id))
        with _PA_LOCK:
            key = compress_frame(frame, result, ToeplitzSeed.expand(seed_id, n, m))
        frame.corrected_bits = None  # release the frame early
        self._store_key(frame.frame_id, key.bits)
        row = window.close(m, n, qber, params.clock_rate_hz, self.result.secure_bits)
        self.stats.write(row)
        self.endpoint.send(MsgType.STATS_PING, row.to_json())
        rec = FrameStats(
            frame.frame_id, int(frame.tally.detected[0, 0]), qber, n1, e1, int(round(frame.leak_bits)), m, m / n
        )
        self.result.frame_records.append(rec)
        if frame_log is not None:
            frame_log.write(rec.to_json() + "\n")
            frame_log.flush()


# ---------------------------------------------------------------------------
# Alice


class AliceNode(_Node):
    role = "alice"
    inbox_types = (MsgType.SIFT_ANNOUNCE, MsgType.EC_SAMPLE, MsgType.EC_VERIFY, MsgType.PA_SEED)

    def __init__(
        self,
        params: ProtocolParams,
        endpoint: Endpoint,
        config: RunConfig,
        pulses: Iterable[PulseBatch],
    ):
        super().__init__(params, endpoint, config)
        self.pulses = pulses
        self._blocks_q: queue.Queue = queue.Queue()
        self._pa_q: queue.Queue = queue.Queue()
        self.reconciler = AliceReconciler(self.family, config.session_seed)
        self._shutdown = threading.Event()

    def _finished_ok(self) -> bool:
        return self._shutdown.is_set()

    def _on_shutdown(self, payload: bytes) -> None:
        if payload == b"abort":
            self._fail(2, "peer aborted")
        self._shutdown.set()

    def _on_stats(self, payload: bytes) -> None:
        self.stats.write(RunStats.from_json(payload))

    def _start(self) -> None:
        self._spawn("sift", self._sift)
        self._spawn("ec", self._ec)
        self._spawn("pa", self._pa)

    def _sift(self) -> None:
        pulses: Iterator[PulseBatch] = iter(self.pulses)
        pb = None
        chunks: list[np.ndarray] = []
        fill = 0
        block_id = 0
        while True:
            payload = self._recv(MsgType.SIFT_ANNOUNCE)
            if payload is None:
                break
            ann = Announcement.from_bytes(payload)
            while pb is None or ann.start_slot >= pb.stop_slot:
                pb = next(pulses, None)
                if pb is None:
                    raise ProtocolError("announcement beyond the pulse stream")
                self.result.slots = pb.stop_slot
            res = alice_reply(pb, ann)
            self.endpoint.send(MsgType.SIFT_REPLY, res.reply.to_bytes())
            self.result.sifted_bits += len(res.key_bits)
            chunks.append(res.key_bits)
            fill += len(res.key_bits)
            while fill >= BLOCK_BITS:
                allbits = np.concatenate(chunks)
                self._blocks_q.put((block_id, allbits[:BLOCK_BITS]))
                block_id += 1
                chunks, fill = [allbits[BLOCK_BITS:]], len(allbits) - BLOCK_BITS

    def _ec(self) -> None:
        while True:
            payload = self._recv(MsgType.EC_SAMPLE)
            if payload is None:
                break
            block_id, sample = wire.decode_sample(payload)
            bid, bits = self._get(self._blocks_q)
            if bid != block_id:
                raise ProtocolError(f"sample for block {block_id}, expected {bid}")
            msg = self.reconciler.respond(block_id, bits, sample)
            if msg is None:
                out = wire.encode_syndrome(block_id, wire.NO_CODE, math.nan, 0, np.empty(0, np.uint8))
            else:
                out = wire.encode_syndrome(block_id, msg.code_index, msg.qber_estimated, msg.verify_tag, msg.syndrome)
            self.endpoint.send(MsgType.EC_SYNDROME, out)
            vpay = self._recv(MsgType.EC_VERIFY)
            if vpay is None:
                raise Aborted()
            vid, ok, _ = wire.decode_verify(vpay)
            if vid != block_id:
                raise ProtocolError(f"verify for block {vid}, expected {block_id}")
            ecb = self.reconciler.finish(block_id, ok)
            self.result.blocks += 1
            self.result.failed_blocks += not ok
            self._pa_q.put(ecb)
        self._pa_q.put(END)

    def _pa(self) -> None:
        asm = FrameAssembler(self.params.pa_dataset_bits)
        while True:
            ecb: ECBlock = self._get(self._pa_q)
            if ecb is END:
                break
            if ecb.status is not Status.CORRECTED:
                continue
            for frame in asm.add_block(ecb.block_id, ecb.key, ecb.leak_bits):
                payload = self._recv(MsgType.PA_SEED)
                if payload is None:
                    raise Aborted()
                frame_id, n, m, seed_id = wire.decode_seed(payload)
                if frame_id != frame.frame_id or n != len(frame.corrected_bits):
                    raise ProtocolError(f"PA seed for frame {frame_id}/{n}, expected {frame.frame_id}/{len(frame.corrected_bits)}")
                result = SecureLengthResult(m, m / n, 0, math.nan, math.nan)
                with _PA_LOCK:
                    key = compress_frame(frame, result, ToeplitzSeed.expand(seed_id, n, m))
                frame.corrected_bits = None
                self._store_key(frame.frame_id, key.bits)


# ---------------------------------------------------------------------------
# entry points


def pulse_source(params: ProtocolParams, config: RunConfig) -> Iterator[PulseBatch]:
    if config.pulses <= 0:
        return iter(())
    return generate_pulses(params, config.pulses, config.sim_seed, config.batch_size)


def event_source(params: ProtocolParams, channel: ChannelDetectorParams, config: RunConfig) -> Iterator[EventBatch]:
    """Bob's detections, simulated from a regenerated copy of Alice's pulses."""
    det = Detector(params, channel, config.sim_seed)
    for pb in pulse_source(params, config):
        yield det.process(pb)


class QuantumLink:
    """Simulates each batch once and feeds both nodes through bounded queues."""

    def __init__(self, params: ProtocolParams, channel: ChannelDetectorParams, config: RunConfig):
        self._alice: queue.Queue = queue.Queue(maxsize=config.queue_depth)
        self._bob: queue.Queue = queue.Queue(maxsize=config.queue_depth)
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, args=(params, channel, config), daemon=True, name="link")
        self._thread.start()

    def _run(self, params, channel, config) -> None:
        det = Detector(params, channel, config.sim_seed)
        try:
            for pb in pulse_source(params, config):
                eb = det.process(pb)
                if not self._offer(self._alice, pb) or not self._offer(self._bob, eb):
                    return
        finally:
            self._offer(self._alice, END)
            self._offer(self._bob, END)

    def _offer(self, q: queue.Queue, item) -> bool:
        while not self._stop.is_set():
            try:
                q.put(item, timeout=0.2)
                return True
            except queue.Full:
                pass
        return False

    def _drain(self, q: queue.Queue) -> Iterator:
        while True:
            try:
                item = q.get(timeout=0.2)
            except queue.Empty:
                if self._stop.is_set():
                    return
                continue
            if item is END:
                return
            yield item

    def alice(self) -> Iterator[PulseBatch]:
        return self._drain(self._alice)

    def bob(self) -> Iterator[EventBatch]:
        return self._drain(self._bob)

    def stop(self) -> None:
        self._stop.set()


def run_node(
    role: str,
    params: ProtocolParams,
    channel: ChannelDetectorParams,
    endpoint: Endpoint,
    config: RunConfig,
    source: Iterable | None = None,
) -> NodeResult:
    """Run one node to completion. ``result.status`` is 0 on success."""
    if role == "alice":
        node = AliceNode(params, endpoint, config, source if source is not None else pulse_source(params, config))
    elif role == "bob":
        node = BobNode(params, endpoint, config, source if source is not None else event_source(params, channel, config))
    else:
        raise ValueError(f"unknown role {role!r}")
    return node.run()


def run_loopback(
    params: ProtocolParams,
    channel: ChannelDetectorParams,
    alice_config: RunConfig,
    bob_config: RunConfig | None = None,
) -> tuple[NodeResult, NodeResult]:
    """Both nodes in one process over an in-process channel and a shared link."""
    bob_config = bob_config or alice_config
    ta, tb = InProcessTransport.pair()
    link = QuantumLink(params, channel, alice_config)
    out: dict[str, NodeResult] = {}

    def go(role, transport, cfg, source):
        out[role] = run_node(role, params, channel, Endpoint(transport), cfg, source)

    threads = [
        threading.Thread(target=go, args=("alice", ta, alice_config, link.alice()), name="alice"),
        threading.Thread(target=go, args=("bob", tb, bob_config, link.bob()), name="bob"),
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    link.stop()
    return out["alice"], out["bob"]
