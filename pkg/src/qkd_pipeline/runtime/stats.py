"""Per-frame run statistics, the stats CSV and its summary."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np


@dataclass
class RunStats:
    sifted_rate: float  # bit/s of simulated time
    secure_rate: float
    qber: float
    ec_failure_rate: float
    f_ec_realized: float
    compression_ratio: float
    cumulative_secure_bits: int

    def to_json(self) -> bytes:
        return json.dumps(asdict(self)).encode()

    @classmethod
    def from_json(cls, data: bytes) -> "RunStats":
        return cls(**json.loads(data))


COLUMNS = [f.name for f in fields(RunStats)]


@dataclass
class Window:
    """Accumulates one reporting window (one PA frame)."""

    slots: int = 0
    sifted_bits: int = 0
    blocks: int = 0
    failed: int = 0
    f_ec_sum: float = 0.0
    f_ec_count: int = 0

    def add_block(self, sifted_bits: int, corrected: bool, f_ec: float | None) -> None:
        self.blocks += 1
        self.sifted_bits += sifted_bits
        if not corrected:
            self.failed += 1
        elif f_ec is not None:
            self.f_ec_sum += f_ec
            self.f_ec_count += 1

    def close(
        self, secure_bits: int, frame_bits: int, qber: float, clock_rate_hz: float, cumulative: int
    ) -> RunStats:
        seconds = self.slots / clock_rate_hz if self.slots else math.nan
        return RunStats(
            sifted_rate=self.sifted_bits / seconds,
            secure_rate=secure_bits / seconds,
            qber=qber,
            ec_failure_rate=self.failed / self.blocks if self.blocks else 0.0,
            f_ec_realized=self.f_ec_sum / self.f_ec_count if self.f_ec_count else math.nan,
            compression_ratio=secure_bits / frame_bits if frame_bits else 0.0,
            cumulative_secure_bits=cumulative,
        )


class StatsWriter:
    """Appends RunStats rows; the header is written even if no row follows."""

    def __init__(self, path: str | Path | None):
        self.rows: list[RunStats] = []
        self._fh = None
        if path is not None:
            self._fh = open(path, "w", newline="")
            self._csv = csv.writer(self._fh)
            self._csv.writerow(COLUMNS)
            self._fh.flush()

    def write(self, row: RunStats) -> None:
        if self.rows and row.cumulative_secure_bits < self.rows[-1].cumulative_secure_bits:
            raise ValueError("cumulative secure bits must not decrease")
        self.rows.append(row)
        if self._fh is not None:
            self._csv.writerow([getattr(row, c) for c in COLUMNS])
            self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def read_stats(path: str | Path) -> list[RunStats]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != COLUMNS:
            raise ValueError(f"unexpected columns {reader.fieldnames}")
        return [
            RunStats(**{k: (int(v) if k == "cumulative_secure_bits" else float(v)) for k, v in r.items()})
            for r in reader
        ]


def summarize(rows: list[RunStats]) -> dict:
    if not rows:
        return {"frames": 0, "cumulative_secure_bits": 0}
    col = lambda name: np.array([getattr(r, name) for r in rows], dtype=float)  # noqa: E731
    secure = col("secure_rate")
    mean_secure = float(secure.mean())
    return {
        "frames": len(rows),
        "sifted_rate_mean": float(col("sifted_rate").mean()),
        "secure_rate_mean": mean_secure,
        "secure_rate_fluctuation": float(secure.std() / mean_secure) if mean_secure > 0 else math.nan,
        "qber_mean": float(col("qber").mean()),
        "ec_failure_rate_mean": float(col("ec_failure_rate").mean()),
        "f_ec_realized_mean": float(np.nanmean(col("f_ec_realized"))) if np.isfinite(col("f_ec_realized")).any() else math.nan,
        "compression_ratio_mean": float(col("compression_ratio").mean()),
        "cumulative_secure_bits": rows[-1].cumulative_secure_bits,
    }
