import math
from dataclasses import replace

import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import brentq

from qkd_pipeline.params import (
    ChannelDetectorParams,
    ProtocolParams,
    asymptotic_rate,
    binary_entropy,
    detection_probability,
    dump_config,
    expected_qber,
    load_config,
    parse_config,
    sifting_efficiency,
    validate,
)

# frozen from a 30-digit evaluation
ETA_SIFT = 0.89927167265785046
H_003 = 0.19439185783157616
BB84_THRESHOLD = 0.11002786443835955

prob = st.floats(0.0, 1.0)


def test_defaults_validate(params, channel):
    assert validate(params, channel).ok


def test_prob_z_below_half_is_flagged(params):
    report = validate(replace(params, prob_z=0.4, prob_x=0.6))
    assert not report.ok
    assert "p_Z ≥ 1/2" in report.violations


def test_equal_thirds_pass_sum_rule(params):
    third = 1.0 / 3.0
    report = validate(replace(params, prob_signal=third, prob_decoy=third, prob_vacuum=third))
    assert not any("p_u + p_v + p_w" in v for v in report.violations)


def test_sum_rule_violation(params):
    report = validate(replace(params, prob_signal=0.5))
    assert "p_u + p_v + p_w = 1" in report.violations


def test_flux_ordering_and_dataset_limit(params):
    assert not validate(replace(params, flux_decoy=0.5)).ok
    assert not validate(replace(params, pa_dataset_bits=(1 << 27) + 1)).ok
    assert not validate(replace(params, epsilon_security=0.0)).ok


def test_channel_ranges(params):
    assert not validate(params, replace(ChannelDetectorParams(), dark_count_prob=1.5)).ok
    assert not validate(params, replace(ChannelDetectorParams(), channel_loss_db=-1.0)).ok


def test_validate_does_not_mutate(params):
    before = replace(params)
    validate(params)
    assert params == before


def test_sifting_efficiency_table_values(params):
    assert sifting_efficiency(params) == pytest.approx(ETA_SIFT, abs=1e-12)
    assert abs(sifting_efficiency(params) - 0.8993) <= 0.0005


def test_sifting_efficiency_exact_cases(params):
    assert sifting_efficiency(replace(params, prob_stabilization=0.0, prob_signal=1.0, prob_z=1.0)) == 1.0
    half = replace(params, prob_stabilization=0.5, prob_signal=0.5, prob_z=0.5)
    assert sifting_efficiency(half) == pytest.approx(1 / 16)


@given(prob, prob, prob, prob)
def test_sifting_efficiency_monotone(a, b, c, d):
    base = ProtocolParams()
    lo, hi = sorted((a, b))
    assert sifting_efficiency(replace(base, prob_signal=lo)) <= sifting_efficiency(replace(base, prob_signal=hi))
    assert sifting_efficiency(replace(base, prob_z=lo)) <= sifting_efficiency(replace(base, prob_z=hi))
    lo, hi = sorted((c, min(d, 0.999)))
    lo = min(lo, hi)
    assert sifting_efficiency(replace(base, prob_stabilization=lo)) >= sifting_efficiency(
        replace(base, prob_stabilization=hi)
    )


def test_discarded_basis_fraction_small(params):
    assert 2 * params.prob_x * params.prob_z < 0.125


def test_binary_entropy_values():
    assert binary_entropy(0.0) == 0.0
    assert binary_entropy(1.0) == 0.0
    assert binary_entropy(0.5) == 1.0
    assert binary_entropy(0.03) == pytest.approx(H_003, abs=1e-12)
    assert abs(binary_entropy(0.03) - 0.19439) < 1e-5


@pytest.mark.parametrize("x", [-0.1, 1.1, math.nan])
def test_binary_entropy_domain(x):
    with pytest.raises(ValueError):
        binary_entropy(x)


@given(prob)
def test_binary_entropy_symmetric(x):
    assert binary_entropy(x) == pytest.approx(binary_entropy(1.0 - x), abs=1e-12)


def test_bb84_threshold():
    x = brentq(lambda q: 1 - 2 * binary_entropy(q), 0.05, 0.2)
    assert x == pytest.approx(BB84_THRESHOLD, abs=1e-9)
    assert abs(x - 0.1100) < 1e-4


def test_asymptotic_rate_noiseless_ceiling(params, channel):
    r = asymptotic_rate(params, channel, 1.0, 0.0, 0.0, 1.0)
    ceiling = params.clock_rate_hz * detection_probability(params, channel) * sifting_efficiency(params)
    assert r == pytest.approx(ceiling)


def test_asymptotic_rate_vanishes_at_threshold(params, channel):
    r = asymptotic_rate(params, channel, 1.0, BB84_THRESHOLD, BB84_THRESHOLD, 1.0)
    assert r == pytest.approx(0.0, abs=1e-3)
    assert asymptotic_rate(params, channel, 1.0, 0.11, 0.12, 1.0) == 0.0


def test_asymptotic_rate_reference_point(params, channel):
    # choose detector efficiency so that the sifted rate is 47.83 Mb/s, then a
    # single-photon fraction that yields a 0.292 compression at QBER 3.07%, f 1.34
    def sifted(eff):
        ch = replace(channel, detector_efficiency=eff)
        return params.clock_rate_hz * detection_probability(params, ch) * sifting_efficiency(params) - 47.83e6

    ch = replace(channel, detector_efficiency=brentq(sifted, 0.01, 1.0))
    p1 = 0.292 + 1.34 * binary_entropy(0.0307)
    r = asymptotic_rate(params, ch, p1, 0.0, 0.0307, 1.34)
    assert 13.7e6 <= r <= 14.0e6
    assert r == pytest.approx(47.83e6 * 0.292, rel=1e-9)


def test_asymptotic_rate_argument_checks(params, channel):
    with pytest.raises(ValueError):
        asymptotic_rate(params, channel, 1.2, 0.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        asymptotic_rate(params, channel, 1.0, 0.0, 0.0, 0.9)


@given(prob, prob, prob, prob, st.floats(1.0, 2.0))
def test_asymptotic_rate_monotone(q1, q2, e1, e2, f):
    params, channel = ProtocolParams(), ChannelDetectorParams()
    qa, qb = sorted((q1, q2))
    ea, eb = sorted((e1, e2))
    r = lambda e, q: asymptotic_rate(params, channel, 0.65, e, q, f)  # noqa: E731
    assert r(0.0, qa) >= r(0.0, qb) >= 0.0
    assert r(ea, 0.01) >= r(eb, 0.01) >= 0.0


def test_expected_qber_near_measured(params, channel):
    assert abs(expected_qber(params, channel) - 0.0307) < 0.004


def test_config_round_trip(tmp_path, params, channel):
    path = tmp_path / "link.cfg"
    path.write_text(dump_config(params, channel))
    assert load_config(path) == (params, channel)


def test_config_parsing():
    p, c = parse_config(["# comment", "flux_decoy = 0.08", "", "afterpulse_prob = 0.05  # inline", "prob_stabilization = 1/128"])
    assert p.flux_decoy == 0.08
    assert c.afterpulse_prob == 0.05
    assert p.prob_stabilization == 1 / 128


@pytest.mark.parametrize(
    "lines",
    [["no_such_key = 1"], ["flux_decoy 0.1"], ["flux_decoy = abc"], ["flux_decoy = 0.1", "flux_decoy = 0.2"], ["pa_dataset_bits = 1.5"]],
)
def test_config_errors(lines):
    with pytest.raises(ValueError):
        parse_config(lines)


def test_both_decoy_fluxes_accepted(params, channel):
    for v in (0.1, 0.08):
        p, _ = parse_config([f"flux_decoy = {v}"])
        assert validate(p, channel).ok
