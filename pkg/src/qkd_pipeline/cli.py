"""Command line entry point: ``qkd-pipeline run|bench|report``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .params import ChannelDetectorParams, ProtocolParams, load_config, validate

log = logging.getLogger("qkd_pipeline")


def _params(args) -> tuple[ProtocolParams, ChannelDetectorParams]:
    if args.config:
        return load_config(args.config)
    params, channel = ProtocolParams(), ChannelDetectorParams()
    validate(params, channel).raise_if_failed()
    return params, channel


def _role_path(path: str | None, role: str) -> str | None:
    if path is None:
        return None
    p = Path(path)
    return str(p.with_name(f"{p.stem}.{role}{p.suffix}"))


def cmd_run(args) -> int:
    from .runtime.node import RunConfig, run_loopback, run_node
    from .runtime.transport import Endpoint, SocketTransport

    params, channel = _params(args)
    config = RunConfig(
        pulses=args.pulses,
        session_seed=args.seed,
        sim_seed=args.sim_seed,
        finite_size=not args.asymptotic,
        workers=args.workers,
        key_path=args.keys,
        stats_path=args.stats,
        frame_log_path=args.frame_log,
        dump_events=args.dump_events,
        max_seconds=args.max_seconds,
        fsync=not args.no_fsync,
    )
    t0 = time.monotonic()
    if args.loopback:
        alice_cfg = replace(config, key_path=_role_path(args.keys, "alice"), stats_path=None, frame_log_path=None, dump_events=None)
        bob_cfg = replace(config, key_path=_role_path(args.keys, "bob"))
        results = run_loopback(params, channel, alice_cfg, bob_cfg)
    else:
        if args.role is None:
            raise SystemExit("--role is required without --loopback")
        if bool(args.listen) == bool(args.connect):
            raise SystemExit("give exactly one of --listen and --connect")
        transport = SocketTransport.listen(args.listen) if args.listen else SocketTransport.connect(args.connect)
        results = (run_node(args.role, params, channel, Endpoint(transport), config),)
    elapsed = time.monotonic() - t0
    status = 0
    for r in results:
        print(
            f"{r.role}: status={r.status} slots={r.slots} sifted={r.sifted_bits} blocks={r.blocks} "
            f"failed={r.failed_blocks} frames={r.frames} secure_bits={r.secure_bits}"
            + (f" error={r.error}" if r.error else "")
        )
        status = status or r.status
    print(f"wall time {elapsed:.1f} s")
    return status


def bench_sift(args) -> dict:
    from .photonic import Detector, generate_pulses
    from .sifting import alice_reply, announce, bob_apply

    params, channel = _params(args)
    det = Detector(params, channel, args.sim_seed)
    sim = sift = 0.0
    sifted = 0
    for pb in generate_pulses(params, args.pulses, args.sim_seed):
        t = time.perf_counter()
        eb = det.process(pb)
        sim += time.perf_counter() - t
        t = time.perf_counter()
        lo = 0
        for ann in announce(eb):
            bits = eb.detector[lo : lo + len(ann.slots)]
            lo += len(ann.slots)
            sifted += len(bob_apply(bits, ann, alice_reply(pb, ann).reply).key_bits)
        sift += time.perf_counter() - t
    return {
        "pulses": args.pulses,
        "sifted_bits": sifted,
        "simulation_mpulses_per_s": args.pulses / sim / 1e6,
        "sifting_mpulses_per_s": args.pulses / sift / 1e6,
    }


def bench_ec(args) -> dict:
    from .ec.reconcile import BLOCK_BITS, Status, default_family, reconcile

    family = default_family()
    rng = np.random.default_rng(args.sim_seed)
    failed = 0
    f_ec = []
    t = time.perf_counter()
    for block_id in range(args.blocks):
        alice = rng.integers(0, 2, BLOCK_BITS, dtype=np.uint8)
        bob = alice ^ (rng.random(BLOCK_BITS) < args.qber).astype(np.uint8)
        _, b = reconcile(alice, bob, block_id, family, args.seed, workers=args.workers)
        if b.status is not Status.CORRECTED:
            failed += 1
        elif b.f_ec_realized is not None:
            f_ec.append(b.f_ec_realized)
    dt = time.perf_counter() - t
    return {
        "blocks": args.blocks,
        "qber": args.qber,
        "failure_rate": failed / args.blocks,
        "f_ec_mean": float(np.mean(f_ec)) if f_ec else None,
        "throughput_mbit_per_s": args.blocks * BLOCK_BITS / dt / 1e6,
    }


def bench_pa(args) -> dict:
    from .pa.toeplitz import ToeplitzSeed, toeplitz_ntt

    n = args.bits
    m = n // 3
    x = np.random.default_rng(args.sim_seed).integers(0, 2, n, dtype=np.uint8)
    seed = ToeplitzSeed.expand(args.seed, n, m)
    t = time.perf_counter()
    toeplitz_ntt(seed, x)
    dt = time.perf_counter() - t
    return {"input_bits": n, "output_bits": m, "seconds": dt, "throughput_mbit_per_s": n / dt / 1e6}


def cmd_bench(args) -> int:
    result = {"sift": bench_sift, "ec": bench_ec, "pa": bench_pa}[args.stage](args)
    print(json.dumps(result, indent=2))
    return 0


def cmd_report(args) -> int:
    from .runtime.stats import read_stats, summarize

    print(json.dumps(summarize(read_stats(args.csv)), indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qkd-pipeline", description="Decoy-state BB84 post-processing pipeline")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one node, or both with --loopback")
    run.add_argument("--role", choices=("alice", "bob"))
    run.add_argument("--config", help="key = value parameter file")
    run.add_argument("--listen", metavar="ADDR", help="host:port to accept the peer on")
    run.add_argument("--connect", metavar="ADDR", help="host:port of the peer")
    run.add_argument("--pulses", type=int, required=True)
    run.add_argument("--loopback", action="store_true", help="both nodes in this process")
    run.add_argument("--stats", help="stats CSV path")
    run.add_argument("--keys", help="key store path (loopback adds .alice/.bob)")
    run.add_argument("--frame-log", help="per-frame JSON lines (Bob)")
    run.add_argument("--dump-events", help="raw detection events (Bob)")
    run.add_argument("--asymptotic", action="store_true", help="asymptotic instead of finite-size key length")
    run.add_argument("--seed", type=int, default=1, help="shared session seed")
    run.add_argument("--sim-seed", type=int, default=7)
    run.add_argument("--workers", type=int, default=1, help="decoder threads")
    run.add_argument("--max-seconds", type=float)
    run.add_argument("--no-fsync", action="store_true")
    run.set_defaults(fn=cmd_run)

    bench = sub.add_parser("bench", help="standalone stage throughput")
    bench.add_argument("stage", choices=("sift", "ec", "pa"))
    bench.add_argument("--config")
    bench.add_argument("--pulses", type=int, default=1 << 25, help="sift: pulses to simulate")
    bench.add_argument("--blocks", type=int, default=4, help="ec: blocks to reconcile")
    bench.add_argument("--qber", type=float, default=0.03, help="ec: channel error rate")
    bench.add_argument("--bits", type=int, default=1 << 22, help="pa: input length")
    bench.add_argument("--workers", type=int, default=1)
    bench.add_argument("--seed", type=int, default=1)
    bench.add_argument("--sim-seed", type=int, default=7)
    bench.set_defaults(fn=cmd_bench)

    report = sub.add_parser("report", help="summarize a stats CSV")
    report.add_argument("csv")
    report.set_defaults(fn=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
