"""Finite-size decoy-state bounds and the secure length of a PA frame.

Gains are normalized per sent pulse of a given intensity and basis, with
the basis-matching probability folded in, so ``Q_k = sum_n Y_n e^-k k^n / n!``.
The vacuum+weak-decoy bounds with ``G_k = Q_k e^k`` read

    Y0 >= (v G_w - w G_v) / (v - w)
    Y1 >= u / (u (v - w) - (v^2 - w^2)) * [G_v - G_w - (v^2 - w^2) / u^2 * (G_u - Y0)]
    e1 <= (GE_k - Y0 / 2) / (k Y1)           (k = u or v, X basis, take the min)

which need ``u > v + w``. In the finite case every observed rate is replaced
by its worst case under the Chernoff-Hoeffding (relative entropy) bound, at
confidence ``1 - eps_i`` per term.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import brentq

from .params import ChannelDetectorParams, ProtocolParams, binary_entropy, slot_model
from .photonic import DECOY, SIGNAL, VACUUM, X, Z
from .sifting import DecoyTally

# Z: Q_w both sides, Q_v both sides, Q_u upper; X: E_u, E_v upper; one for n1 itself
ESTIMATION_TERMS = ("Qw_Z_lo", "Qw_Z_hi", "Qv_Z_lo", "Qv_Z_hi", "Qu_Z_hi", "Eu_X_hi", "Ev_X_hi", "n1_lo")
PA_CEILING = 1.0 / 3.0


class EstimationFailure(ValueError):
    """Tallies too degenerate to bound the single-photon contribution."""


def _kl(a: float, b: float) -> float:
    out = 0.0
    if a > 0.0:
        out += a * math.log(a / b)
    if a < 1.0:
        out += (1.0 - a) * math.log((1.0 - a) / (1.0 - b))
    return out


def rate_upper(k: float, n: float, log_inv_eps: float) -> float:
    """Largest p with ``n * D(k/n || p) <= log(1/eps)`` (p >= k/n)."""
    if n <= 0:
        raise ValueError("no trials")
    q = k / n
    if log_inv_eps == 0.0 or q >= 1.0:
        return q
    f = lambda p: n * _kl(q, p) - log_inv_eps  # noqa: E731
    hi = 1.0 - 1e-15
    if f(hi) <= 0.0:
        return 1.0
    return brentq(f, max(q, 1e-300), hi, xtol=1e-300, rtol=1e-13)


def rate_lower(k: float, n: float, log_inv_eps: float) -> float:
    """Smallest p with ``n * D(k/n || p) <= log(1/eps)`` (p <= k/n)."""
    if n <= 0:
        raise ValueError("no trials")
    q = k / n
    if log_inv_eps == 0.0 or q <= 0.0:
        return q
    f = lambda p: n * _kl(q, p) - log_inv_eps  # noqa: E731
    lo = 1e-300
    if f(lo) <= 0.0:
        return 0.0
    return brentq(f, lo, min(q, 1.0 - 1e-15), xtol=1e-300, rtol=1e-13)


@dataclass(frozen=True)
class SecurityBounds:
    n1_z_lower: float
    e1_upper: float
    n_sifted: int
    y0_lower: float
    y1_lower: float
    epsilon_budget: dict = field(default_factory=dict)
    asymptotic: "SecurityBounds | None" = None

    @property
    def p1_lower(self) -> float:
        return self.n1_z_lower / self.n_sifted if self.n_sifted else 0.0


@dataclass(frozen=True)
class SecureLengthResult:
    secure_bits: int
    compression_ratio: float
    asymptotic_bits: int
    raw_bits: float  # before clamping to [0, frame / 3]
    asymptotic_raw_bits: float


def finite_delta(epsilon: float) -> float:
    """Smoothing and hashing penalty in bits."""
    return 7.0 * math.log2(2.0 / epsilon)


def decoy_bounds(
    tally: DecoyTally,
    params: ProtocolParams,
    epsilon: float | None = None,
    finite: bool = True,
) -> SecurityBounds:
    """Single-photon count and phase-error bounds for one frame's tallies.

    With ``finite`` the asymptotic bounds of the same tally ride along on
    the ``asymptotic`` attribute.
    """
    eps = params.epsilon_security if epsilon is None else epsilon
    mu, nu, om = params.fluxes
    if not mu > nu + om:
        raise EstimationFailure("signal flux must exceed decoy + vacuum flux")
    sent, det, err = tally.sent, tally.detected, tally.errors
    if np.any(sent[:, Z] <= 0) or np.any(sent[:2, X] <= 0):
        raise EstimationFailure("an intensity/basis class was never sent")
    if det[DECOY, Z] == 0 or det[SIGNAL, Z] == 0:
        raise EstimationFailure("no decoy or signal detections")

    eps_i = eps / len(ESTIMATION_TERMS)
    ln = math.log(1.0 / eps_i) if finite else 0.0

    def gain(k: int, b: int, upper: bool, counts: np.ndarray = det) -> float:
        bound = rate_upper if upper else rate_lower
        return bound(float(counts[k, b]), float(sent[k, b]), ln) * math.exp(params.fluxes[k])

    y0 = max(0.0, (nu * gain(VACUUM, Z, False) - om * gain(DECOY, Z, True)) / (nu - om))
    y1 = (
        mu
        / (mu * (nu - om) - (nu**2 - om**2))
        * (gain(DECOY, Z, False) - gain(VACUUM, Z, True) - (nu**2 - om**2) / mu**2 * (gain(SIGNAL, Z, True) - y0))
    )
    if not y1 > 0.0:
        raise EstimationFailure("single-photon yield bound is not positive")

    # yields in X follow from Z through the ratio of Bob's basis probabilities
    r = params.prob_x / params.prob_z
    e1 = 0.5
    for k in (SIGNAL, DECOY):
        ge = gain(k, X, True, err)
        e1 = min(e1, (ge - 0.5 * y0 * r) / (params.fluxes[k] * y1 * r))
    e1 = min(0.5, max(0.0, e1))

    n_sifted = int(round(det[SIGNAL, Z]))
    n1_expected = sent[SIGNAL, Z] * mu * math.exp(-mu) * y1
    n1_expected = min(n1_expected, float(sent[SIGNAL, Z]))
    n1 = rate_lower(n1_expected, float(sent[SIGNAL, Z]), ln) * sent[SIGNAL, Z] if finite else n1_expected
    n1 = min(max(n1, 0.0), float(n_sifted))

    budget = {name: eps_i for name in ESTIMATION_TERMS} if finite else {}
    asym = decoy_bounds(tally, params, eps, finite=False) if finite else None
    return SecurityBounds(n1, e1, n_sifted, y0, y1, budget, asym)


def secure_length(
    bounds: SecurityBounds,
    qber_measured: float,
    leak_ec_bits: float,
    verify_bits: float,
    params: ProtocolParams,
    frame_bits: int | None = None,
) -> SecureLengthResult:
    """Secure key length for a frame of ``frame_bits`` error-corrected bits.

    The single-photon fraction is scaled from the tally's sifted count to the
    frame. ``leak_ec_bits`` and ``verify_bits`` are both subtracted, so pass
    tag bits in only one of them. ``qber_measured`` only enters through the
    realized leakage.
    """
    if not 0.0 <= qber_measured <= 1.0:
        raise ValueError("qber must lie in [0, 1]")
    n = params.pa_dataset_bits if frame_bits is None else frame_bits
    ceiling = math.floor(n * PA_CEILING)

    def length(b: SecurityBounds, delta: float) -> float:
        e1 = min(0.5, max(0.0, b.e1_upper))
        return n * b.p1_lower * (1.0 - binary_entropy(e1)) - leak_ec_bits - verify_bits - delta

    raw = length(bounds, finite_delta(params.epsilon_security) if bounds.asymptotic is not None else 0.0)
    asym_raw = length(bounds.asymptotic, 0.0) if bounds.asymptotic is not None else raw
    clamp = lambda x: int(min(max(math.floor(x), 0), ceiling))  # noqa: E731
    secure = clamp(raw)
    return SecureLengthResult(
        secure_bits=secure,
        compression_ratio=secure / n if n else 0.0,
        asymptotic_bits=clamp(asym_raw),
        raw_bits=raw,
        asymptotic_raw_bits=asym_raw,
    )


def expected_tally(
    params: ProtocolParams, channel: ChannelDetectorParams, n_sifted: float, rounded: bool = False
) -> DecoyTally:
    """Mean tally of a frame whose Z-basis signal detections number ``n_sifted``.

    Counts stay fractional unless ``rounded``.
    """
    d_u = slot_model(params, channel, SIGNAL).detect
    slots = n_sifted / ((1 - params.prob_stabilization) * params.prob_signal * params.prob_z**2 * d_u)
    tally = DecoyTally(*(np.zeros((3, 2)) for _ in range(3)))
    for k in range(3):
        m = slot_model(params, channel, k)
        for b, pb in enumerate(params.basis_probs):
            sent = slots * (1 - params.prob_stabilization) * params.intensity_probs[k] * pb
            tally.sent[k, b] = sent
            tally.detected[k, b] = sent * pb * m.detect
            tally.errors[k, b] = sent * pb * m.error
    if rounded:
        return DecoyTally(*(np.rint(a).astype(np.int64) for a in (tally.sent, tally.detected, tally.errors)))
    return tally


@dataclass
class FrameStats:
    frame_id: int
    n_sifted: int
    qber: float
    n1_lower: float
    e1_upper: float
    leak_ec: int
    secure_bits: int
    ratio: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=False)
