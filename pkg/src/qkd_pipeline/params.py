"""Protocol and device configuration, validation and closed-form rates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable

INTENSITIES = ("signal", "decoy", "vacuum")
BASES = ("Z", "X")

MAX_PA_BITS = 1 << 27


SUM_TOLERANCE = 2e-3


@dataclass(frozen=True)
class ProtocolParams:
    """Decoy-state BB84 settings; defaults are the reference operating point."""

    clock_rate_hz: float = 1.0e9
    flux_signal: float = 0.4
    flux_decoy: float = 0.1
    flux_vacuum: float = 0.0007
    prob_signal: float = 0.96973
    prob_decoy: float = 0.01661
    prob_vacuum: float = 0.01466
    prob_z: float = 0.96677
    prob_x: float = 0.03323
    prob_stabilization: float = 1.0 / 128.0
    pa_dataset_bits: int = 96 * 1024 * 1024
    epsilon_security: float = 1e-10

    @property
    def fluxes(self) -> tuple[float, float, float]:
        return (self.flux_signal, self.flux_decoy, self.flux_vacuum)

    @property
    def intensity_probs(self) -> tuple[float, float, float]:
        """Probabilities actually sampled: vacuum takes whatever signal and decoy leave."""
        return (self.prob_signal, self.prob_decoy, 1.0 - self.prob_signal - self.prob_decoy)

    @property
    def basis_probs(self) -> tuple[float, float]:
        return (self.prob_z, self.prob_x)


@dataclass(frozen=True)
class ChannelDetectorParams:
    """Statistical model of the quantum channel and the two-detector receiver.

    ``dark_count_prob`` is per detector per gate: a 450 kHz combined dark rate
    over two detectors gated at 1 GHz gives 2.25e-4.
    """

    channel_loss_db: float = 2.0
    detector_efficiency: float = 0.31
    receiver_loss_db: float = 2.0
    dark_count_prob: float = 2.25e-4
    afterpulse_prob: float = 0.044
    misalignment_error: float = 0.0057

    @property
    def transmittance(self) -> float:
        """Probability a photon leaving Alice produces an avalanche."""
        loss = self.channel_loss_db + self.receiver_loss_db
        return 10.0 ** (-loss / 10.0) * self.detector_efficiency


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def raise_if_failed(self) -> None:
        if self.violations:
            raise ValueError("invalid parameters: " + "; ".join(self.violations))


def validate(params: ProtocolParams, channel: ChannelDetectorParams | None = None) -> ValidationReport:
    report = ValidationReport()
    v = report.violations
    # the published intensity probabilities sum to 1.001, so allow that much
    if abs(params.prob_signal + params.prob_decoy + params.prob_vacuum - 1.0) > SUM_TOLERANCE:
        v.append("p_u + p_v + p_w = 1")
    if params.prob_signal + params.prob_decoy > 1.0:
        v.append("p_u + p_v <= 1")
    if abs(params.prob_z + params.prob_x - 1.0) > 1e-9:
        v.append("p_Z + p_X = 1")
    if params.prob_z < 0.5:
        v.append("p_Z ≥ 1/2")
    for name in ("prob_signal", "prob_decoy", "prob_vacuum", "prob_z", "prob_x"):
        value = getattr(params, name)
        if not 0.0 <= value <= 1.0:
            v.append(f"{name} in [0, 1]")
    if not params.flux_signal > params.flux_decoy > params.flux_vacuum >= 0.0:
        v.append("u > v > w >= 0")
    if not 0.0 <= params.prob_stabilization < 1.0:
        v.append("0 <= p_st < 1")
    if not 0 < params.pa_dataset_bits <= MAX_PA_BITS:
        v.append("0 < PA dataset <= 2^27 bits")
    if not 0.0 < params.epsilon_security < 1.0:
        v.append("0 < epsilon < 1")
    if params.clock_rate_hz <= 0:
        v.append("clock rate > 0")
    if channel is not None:
        for name in ("detector_efficiency", "dark_count_prob", "afterpulse_prob", "misalignment_error"):
            value = getattr(channel, name)
            if not 0.0 <= value <= 1.0:
                v.append(f"{name} in [0, 1]")
        if channel.afterpulse_prob >= 1.0:
            v.append("afterpulse_prob < 1")
        for name in ("channel_loss_db", "receiver_loss_db"):
            if getattr(channel, name) < 0:
                v.append(f"{name} >= 0")
    return report


def sifting_efficiency(params: ProtocolParams) -> float:
    """Fraction of time slots that can end up in the sifted key."""
    return (1.0 - params.prob_stabilization) * params.prob_signal * params.prob_z**2


def binary_entropy(x: float) -> float:
    if not 0.0 <= x <= 1.0 or math.isnan(x):
        raise ValueError(f"binary entropy undefined for {x!r}")
    if x == 0.0 or x == 1.0:
        return 0.0
    return -x * math.log2(x) - (1.0 - x) * math.log2(1.0 - x)


# ---------------------------------------------------------------------------
# closed-form detection model (shared with the photonic simulator)


@dataclass(frozen=True)
class SlotModel:
    """Expected per-slot detector behaviour at one flux and basis relation."""

    click0: float  # P(detector holding the correct bit clicks)
    click1: float  # P(the other detector clicks)

    @property
    def detect(self) -> float:
        return 1.0 - (1.0 - self.click0) * (1.0 - self.click1)

    @property
    def error(self) -> float:
        """P(event whose resolved bit is wrong); double clicks split evenly."""
        both = self.click0 * self.click1
        return self.click1 * (1.0 - self.click0) + 0.5 * both


def _slot(mean_photons_0: float, mean_photons_1: float, dark: float, ap_per_detector: float) -> SlotModel:
    keep = (1.0 - dark) * math.exp(-ap_per_detector)
    return SlotModel(
        click0=1.0 - math.exp(-mean_photons_0) * keep,
        click1=1.0 - math.exp(-mean_photons_1) * keep,
    )


def afterpulse_rate(params: ProtocolParams, channel: ChannelDetectorParams) -> float:
    """Stationary mean number of afterpulse clicks landing per slot (both detectors).

    Every retained click spawns an afterpulse with probability ``p_a``, so the
    rate solves ``a = p_a * E[clicks per slot](a)``.
    """
    pa = channel.afterpulse_prob
    if pa == 0.0:
        return 0.0
    a = 0.0
    for _ in range(200):
        nxt = pa * _mean_clicks(params, channel, a)
        if abs(nxt - a) < 1e-15:
            break
        a = nxt
    return a


def _mean_clicks(params: ProtocolParams, channel: ChannelDetectorParams, ap: float) -> float:
    t = channel.transmittance
    e = channel.misalignment_error
    d = channel.dark_count_prob
    match = params.prob_z**2 + params.prob_x**2
    total = 0.0
    for flux, prob in zip(params.fluxes, params.intensity_probs):
        lam = flux * t
        m = _slot(lam * (1 - e), lam * e, d, ap / 2)
        mm = _slot(lam / 2, lam / 2, d, ap / 2)
        total += prob * (match * (m.click0 + m.click1) + (1 - match) * (mm.click0 + mm.click1))
    lam = params.flux_signal * t
    st = _slot(lam / 2, lam / 2, d, ap / 2)
    ps = params.prob_stabilization
    return (1 - ps) * total + ps * (st.click0 + st.click1)


def slot_model(
    params: ProtocolParams,
    channel: ChannelDetectorParams,
    intensity: int,
    matched: bool = True,
) -> SlotModel:
    """Expected click probabilities for a non-stabilization slot."""
    ap = afterpulse_rate(params, channel)
    lam = params.fluxes[intensity] * channel.transmittance
    if matched:
        e = channel.misalignment_error
        return _slot(lam * (1 - e), lam * e, channel.dark_count_prob, ap / 2)
    return _slot(lam / 2, lam / 2, channel.dark_count_prob, ap / 2)


def detection_probability(params: ProtocolParams, channel: ChannelDetectorParams) -> float:
    """Per-pulse detection probability of a basis-matched signal slot."""
    return slot_model(params, channel, 0, matched=True).detect


def expected_qber(params: ProtocolParams, channel: ChannelDetectorParams) -> float:
    m = slot_model(params, channel, 0, matched=True)
    return m.error / m.detect


def asymptotic_rate(
    params: ProtocolParams,
    channel: ChannelDetectorParams,
    p1_lower: float,
    e1_upper: float,
    qber: float,
    f_ec: float,
) -> float:
    """Secure key rate in bit/s for infinitely long keys, clamped at zero."""
    for name, value in (("p1_lower", p1_lower), ("e1_upper", e1_upper), ("qber", qber)):
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {value}")
    if f_ec < 1.0:
        raise ValueError("f_ec must be >= 1")
    eta_d = detection_probability(params, channel)
    # entropy turns back down past 1/2; an error rate that high already means no key
    bracket = p1_lower * (1.0 - binary_entropy(min(e1_upper, 0.5))) - f_ec * binary_entropy(min(qber, 0.5))
    return max(0.0, params.clock_rate_hz * eta_d * sifting_efficiency(params) * bracket)


# ---------------------------------------------------------------------------
# config files


def _coerce(is_int: bool, raw: str) -> float | int:
    if "/" in raw:
        num, _, den = raw.partition("/")
        value = float(num) / float(den)
    else:
        value = float(raw)
    if is_int:
        if value != int(value):
            raise ValueError(raw)
        return int(value)
    return value


def parse_config(lines: Iterable[str]) -> tuple[ProtocolParams, ChannelDetectorParams]:
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys raise."""
    proto_fields = {f.name: f for f in fields(ProtocolParams)}
    chan_fields = {f.name: f for f in fields(ChannelDetectorParams)}
    proto: dict[str, object] = {}
    chan: dict[str, object] = {}
    for lineno, line in enumerate(lines, 1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        key, sep, value = text.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key or not value:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        if key in proto_fields:
            target, fdef = proto, proto_fields[key]
        elif key in chan_fields:
            target, fdef = chan, chan_fields[key]
        else:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        if key in target:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        try:
            target[key] = _coerce(fdef.type in (int, "int"), value)
        except ValueError as exc:
            raise ValueError(f"line {lineno}: bad value for {key!r}: {value!r}") from exc
    return replace(ProtocolParams(), **proto), replace(ChannelDetectorParams(), **chan)


def load_config(path: str | Path) -> tuple[ProtocolParams, ChannelDetectorParams]:
    with open(path, encoding="utf-8") as fh:
        params, channel = parse_config(fh)
    validate(params, channel).raise_if_failed()
    return params, channel


def dump_config(params: ProtocolParams, channel: ChannelDetectorParams) -> str:
    out = []
    for obj in (params, channel):
        for f in fields(obj):
            out.append(f"{f.name} = {getattr(obj, f.name)!r}")
    return "\n".join(out) + "\n"
