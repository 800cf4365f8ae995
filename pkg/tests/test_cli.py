import json

import pytest

from qkd_pipeline.cli import _role_path, build_parser, main
from qkd_pipeline.runtime.stats import RunStats, StatsWriter, read_stats


@pytest.fixture
def small_cfg(tmp_path):
    path = tmp_path / "link.cfg"
    path.write_text(f"pa_dataset_bits = {(1 << 20) - 8192}\n")
    return path


def test_role_path():
    assert _role_path("out/keys.bin", "alice") == "out/keys.alice.bin"
    assert _role_path(None, "bob") is None


def test_run_requires_pulses():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["run", "--loopback"])


def test_report(tmp_path, capsys):
    path = tmp_path / "s.csv"
    w = StatsWriter(path)
    w.write(RunStats(4e7, 1e7, 0.03, 0.0, 1.3, 0.25, 100))
    w.close()
    assert main(["report", str(path)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["frames"] == 1 and out["cumulative_secure_bits"] == 100


def test_loopback_run(tmp_path, small_cfg, capsys):
    keys = tmp_path / "k.bin"
    stats = tmp_path / "s.csv"
    rc = main([
        "run", "--loopback", "--config", str(small_cfg), "--pulses", "26000000", "--asymptotic",
        "--keys", str(keys), "--stats", str(stats), "--frame-log", str(tmp_path / "f.jsonl"), "--no-fsync",
    ])
    assert rc == 0
    text = capsys.readouterr().out
    assert "alice: status=0" in text and "bob: status=0" in text
    a = (tmp_path / "k.alice.bin").read_bytes()
    assert a and a == (tmp_path / "k.bob.bin").read_bytes()
    rows = read_stats(stats)
    assert len(rows) == 1
    rec = json.loads((tmp_path / "f.jsonl").read_text().splitlines()[0])
    assert rec["secure_bits"] == rows[0].cumulative_secure_bits


def test_run_needs_role_or_loopback(small_cfg):
    with pytest.raises(SystemExit):
        main(["run", "--config", str(small_cfg), "--pulses", "10"])
    with pytest.raises(SystemExit):
        main(["run", "--role", "bob", "--config", str(small_cfg), "--pulses", "10"])


def test_bad_config_rejected(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("flux_decoy = 0.9\n")
    with pytest.raises(ValueError):
        main(["run", "--loopback", "--config", str(path), "--pulses", "10"])


@pytest.mark.parametrize(
    "argv,key",
    [
        (["bench", "sift", "--pulses", "2000000"], "sifting_mpulses_per_s"),
        (["bench", "ec", "--blocks", "1"], "throughput_mbit_per_s"),
        (["bench", "pa", "--bits", "100000"], "throughput_mbit_per_s"),
    ],
)
def test_bench(argv, key, capsys):
    assert main(argv) == 0
    out = json.loads(capsys.readouterr().out)
    assert out[key] > 0
