import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import toeplitz
from scipy.stats import chisquare

from qkd_pipeline.pa.frame import FrameAssembler, PAFrame, compress_frame
from qkd_pipeline.pa.keystore import KeyStore, encode_record, iter_records, read_store
from qkd_pipeline.pa.ntt import PRIME, cyclic_convolution, ntt_forward, ntt_inverse, root_of_unity
from qkd_pipeline.pa.toeplitz import (
    SeedReuse,
    ToeplitzSeed,
    toeplitz_direct,
    toeplitz_ntt,
    toeplitz_rows,
    transform_length,
)
from qkd_pipeline.security import SecureLengthResult
from qkd_pipeline.sifting import DecoyTally


def _matrix(seed: ToeplitzSeed) -> np.ndarray:
    # independent construction: first column and first row of T
    n, m = seed.n, seed.m
    col = seed.bits[n - 1 : n + m - 1]
    row = seed.bits[: n][::-1]
    return toeplitz(col, row).astype(np.int64)


def _secure(m):
    return SecureLengthResult(secure_bits=m, compression_ratio=0.0, asymptotic_bits=m, raw_bits=float(m), asymptotic_raw_bits=float(m))


@pytest.mark.parametrize("log_len", [0, 1, 2, 5, 10, 16])
def test_ntt_round_trip(log_len):
    rng = np.random.default_rng(log_len)
    a = rng.integers(0, PRIME, 1 << log_len, dtype=np.uint32)
    np.testing.assert_array_equal(ntt_inverse(ntt_forward(a)), a)


def test_root_of_unity_order():
    for k in (1, 4, 20, 30):
        w = root_of_unity(1 << k)
        assert pow(w, 1 << k, PRIME) == 1
        assert pow(w, 1 << (k - 1), PRIME) == PRIME - 1
    with pytest.raises(ValueError):
        root_of_unity(1 << 31)
    with pytest.raises(ValueError):
        root_of_unity(12)


@given(st.lists(st.integers(0, 1), min_size=1, max_size=40), st.lists(st.integers(0, 1), min_size=1, max_size=40))
def test_cyclic_convolution_matches_numpy(a, b):
    length = transform_length(len(a), len(b))
    got = cyclic_convolution(np.array(a), np.array(b), length)
    lin = np.convolve(a, b)
    want = np.zeros(length, np.int64)
    want[: len(lin)] = lin
    np.testing.assert_array_equal(got, want)


def test_cyclic_convolution_wraps():
    got = cyclic_convolution(np.array([0, 0, 0, 1]), np.array([0, 1]), 4)
    np.testing.assert_array_equal(got, [1, 0, 0, 0])


def test_hand_built_3x8():
    bits = np.array([1, 0, 1, 1, 0, 0, 1, 0, 1, 1], np.uint8)
    seed = ToeplitzSeed(bits, 8, 3)
    t = np.array(
        [
            [0, 1, 0, 0, 1, 1, 0, 1],
            [1, 0, 1, 0, 0, 1, 1, 0],
            [1, 1, 0, 1, 0, 0, 1, 1],
        ]
    )
    np.testing.assert_array_equal(_matrix(seed), t)
    x = np.array([1, 1, 0, 1, 0, 0, 0, 1], np.uint8)
    want = t @ x % 2
    np.testing.assert_array_equal(toeplitz_direct(seed, x), want)
    np.testing.assert_array_equal(toeplitz_ntt(seed, x), want)


def test_single_bit_and_zero_seed():
    one = ToeplitzSeed(np.array([1], np.uint8), 1, 1)
    assert toeplitz_ntt(one, np.array([1], np.uint8)).tolist() == [1]
    zero = ToeplitzSeed(np.zeros(99, np.uint8), 64, 36)
    x = np.ones(64, np.uint8)
    assert not toeplitz_ntt(zero, x).any()
    empty = ToeplitzSeed(np.empty(0, np.uint8), 10, 0)
    assert toeplitz_ntt(empty, np.ones(10, np.uint8)).size == 0


def test_seed_length_checked():
    with pytest.raises(ValueError):
        ToeplitzSeed(np.zeros(5, np.uint8), 4, 3)
    seed = ToeplitzSeed.expand(1, 8, 3)
    with pytest.raises(ValueError):
        toeplitz_direct(seed, np.zeros(7, np.uint8))


@given(st.integers(0, 2**32), st.integers(1, 300), st.integers(0, 100))
def test_toeplitz_linear(s, n, m):
    m = min(m, n)
    seed = ToeplitzSeed.expand(s, n, m)
    rng = np.random.default_rng(s)
    a = rng.integers(0, 2, n, dtype=np.uint8)
    b = rng.integers(0, 2, n, dtype=np.uint8)
    np.testing.assert_array_equal(toeplitz_ntt(seed, a ^ b), toeplitz_ntt(seed, a) ^ toeplitz_ntt(seed, b))


def test_ntt_equals_direct_and_dense():
    rng = np.random.default_rng(10)
    for trial in range(200):
        n = int(rng.integers(1, 1 << 12))
        m = int(rng.integers(0, n + 1))
        seed = ToeplitzSeed.expand(trial, n, m)
        x = rng.integers(0, 2, n, dtype=np.uint8)
        fast = toeplitz_ntt(seed, x)
        np.testing.assert_array_equal(fast, toeplitz_direct(seed, x))
        if trial < 20 and m:
            np.testing.assert_array_equal(fast, _matrix(seed) @ x % 2)


def test_rows_subset():
    seed = ToeplitzSeed.expand(4, 500, 200)
    x = np.random.default_rng(4).integers(0, 2, 500, dtype=np.uint8)
    rows = np.array([0, 17, 199])
    np.testing.assert_array_equal(toeplitz_rows(seed, x, rows), toeplitz_direct(seed, x)[rows])


def test_output_uniform_over_seeds():
    # for a fixed nonzero input, T x is uniform over random seeds
    n, m, trials = 16, 4, 100_000
    rng = np.random.default_rng(11)
    x = rng.integers(0, 2, n, dtype=np.uint8)
    x[0] = 1
    seeds = rng.integers(0, 2, (trials, n + m - 1), dtype=np.uint8)
    windows = np.lib.stride_tricks.sliding_window_view(seeds, n, axis=1)[:, :, ::-1]
    out = (windows.astype(np.int64) @ x) % 2
    codes = out @ (1 << np.arange(m))
    counts = np.bincount(codes, minlength=1 << m)
    assert chisquare(counts).pvalue > 1e-4
    # spot check one seed against the library path
    s = ToeplitzSeed(seeds[0], n, m)
    np.testing.assert_array_equal(toeplitz_direct(s, x), out[0])


def test_two_universal_collisions():
    n, m, trials = 12, 3, 100_000
    rng = np.random.default_rng(12)
    x = rng.integers(0, 2, n, dtype=np.uint8)
    y = x.copy()
    y[[2, 7]] ^= 1
    seeds = rng.integers(0, 2, (trials, n + m - 1), dtype=np.uint8)
    windows = np.lib.stride_tricks.sliding_window_view(seeds, n, axis=1)[:, :, ::-1].astype(np.int64)
    same = np.all((windows @ x) % 2 == (windows @ y) % 2, axis=1).mean()
    assert abs(same - 2.0**-m) < 4 * np.sqrt(2.0**-m / trials)


def _frame(n, frame_id=0):
    bits = np.random.default_rng(frame_id).integers(0, 2, n, dtype=np.uint8)
    return PAFrame(frame_id, bits, [0], 10.0, DecoyTally())


def test_compress_frame_consumes_seed_and_frame():
    frame = _frame(3000)
    seed = ToeplitzSeed.expand(5, 3000, 900)
    key = compress_frame(frame, _secure(900), seed)
    np.testing.assert_array_equal(key.bits, toeplitz_direct(ToeplitzSeed.expand(5, 3000, 900), frame.corrected_bits))
    with pytest.raises(RuntimeError):
        compress_frame(frame, _secure(900), ToeplitzSeed.expand(6, 3000, 900))
    with pytest.raises(SeedReuse):
        compress_frame(_frame(3000, 1), _secure(900), seed)


def test_compress_frame_checks_sizes():
    with pytest.raises(ValueError):
        compress_frame(_frame(3000), _secure(900), ToeplitzSeed.expand(5, 3000, 800))
    with pytest.raises(ValueError):
        compress_frame(_frame(300), _secure(150), ToeplitzSeed.expand(5, 300, 150))


def test_compress_zero_length():
    key = compress_frame(_frame(100), _secure(0), ToeplitzSeed.expand(1, 100, 0))
    assert key.bits.size == 0


def test_assembler_spills_with_proportional_leak():
    asm = FrameAssembler(1000)
    t = DecoyTally()
    t.sent[0, 0] = 5
    asm.add_tally(t)
    assert asm.add_block(0, np.zeros(600, np.uint8), 60.0, 6) == []
    frames = asm.add_block(1, np.ones(900, np.uint8), 90.0, 9)
    assert len(frames) == 1
    f = frames[0]
    assert len(f.corrected_bits) == 1000 and f.block_ids == [0, 1]
    assert f.leak_bits == pytest.approx(60 + 90 * 400 / 900)
    assert f.error_bits == 10  # 6 + 9 * 4/9
    assert f.tally.sent[0, 0] == 5
    assert asm.pending_bits == 500
    frames = asm.add_block(2, np.ones(2000, np.uint8), 200.0)
    assert [g.frame_id for g in frames] == [1, 2]
    assert frames[0].leak_bits == pytest.approx(90 * 500 / 900 + 50)
    assert frames[1].leak_bits == pytest.approx(100) and frames[1].block_ids == [2]
    assert frames[0].error_bits is None  # one contributor had no count
    assert asm.pending_bits == 500


def test_assembler_rejects_bad_size():
    with pytest.raises(ValueError):
        FrameAssembler(0)


def test_keystore_round_trip(tmp_path):
    path = tmp_path / "keys.bin"
    rng = np.random.default_rng(13)
    keys = [rng.integers(0, 2, n, dtype=np.uint8) for n in (0, 7, 1000)]
    with KeyStore(path) as ks:
        for i, k in enumerate(keys):
            ks.append(i, k)
    recs, size = read_store(path)
    assert size == path.stat().st_size
    assert [r.frame_id for r in recs] == [0, 1, 2]
    for r, k in zip(recs, keys):
        np.testing.assert_array_equal(r.bits, k)


def test_keystore_truncated_and_corrupt(tmp_path):
    rec = [encode_record(i, np.ones(100 + i, np.uint8)) for i in range(3)]
    data = b"".join(rec)
    good = len(rec[0]) + len(rec[1])
    for cut in range(good, len(data)):
        assert len(list(iter_records(data[:cut]))) == 2
    bad = bytearray(data)
    bad[len(rec[0]) + 15] ^= 0x01
    assert len(list(iter_records(bytes(bad)))) == 1
    path = tmp_path / "torn.bin"
    path.write_bytes(data[: good + 5])
    recs, size = read_store(path)
    assert len(recs) == 2 and size == good


@pytest.mark.slow
def test_full_size_transform_round_trip():
    # the largest transform a 2^27-bit frame needs
    a = np.random.default_rng(14).integers(0, 2, 1 << 27, dtype=np.uint32)
    np.testing.assert_array_equal(ntt_inverse(ntt_forward(a)), a)
