import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from canal_lq.errors import ConfigurationError
from canal_lq.filters import (FilterBank, IIRFilterCoeffs, IIRFilterState, ScalarKalman,
                              design_butterworth, filter_sequence, filter_step, kalman_gain,
                              kalman_update, stationary_variance)

COEFFS = design_butterworth()


def db(x):
    return 20 * math.log10(abs(x))


def test_dc_gain():
    assert abs(COEFFS.dc_gain - 1.0) <= 1e-9
    assert COEFFS.order == 3


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.floats(1e-4, 0.05))
def test_dc_gain_any_design(order, cutoff):
    c = design_butterworth(order, cutoff)
    assert abs(c.dc_gain - 1.0) <= 1e-9


def test_minus_3db_at_cutoff():
    assert db(COEFFS.response(3e-3)) == pytest.approx(-3.01, abs=0.1)


def test_rolloff_one_decade_above_cutoff():
    # stated target; the pre-warped bilinear design gives about -68.7 dB here
    assert db(COEFFS.response(3e-2)) == pytest.approx(-60.0, abs=3.0)


@pytest.mark.parametrize("w", [1e-4, 1e-3, 3e-3, 1e-2, 2.45e-2, 3e-2, 5e-2])
def test_magnitude_matches_warped_analog_prototype(w):
    T = 60.0
    omega = math.tan(w * T / 2) / math.tan(3e-3 * T / 2)
    expect = 1.0 / math.sqrt(1.0 + omega ** 6)
    assert abs(COEFFS.response(w)) == pytest.approx(expect, rel=1e-9)


def test_magnitude_monotone():
    w = np.linspace(1e-6, math.pi / 60 * 0.999, 2000)
    mag = np.abs(COEFFS.response(w))
    assert np.all(np.diff(mag) <= 1e-15)


def test_response_matches_direct_polynomial():
    # independent evaluation of b(z^-1)/a(z^-1)
    w = 3e-3
    z = np.exp(1j * w * 60)
    num = sum(bk * z ** -k for k, bk in enumerate(COEFFS.b))
    den = sum(ak * z ** -k for k, ak in enumerate(COEFFS.a))
    assert COEFFS.response(w) == pytest.approx(num / den, rel=1e-12)


def test_above_nyquist_rejected():
    with pytest.raises(ConfigurationError):
        design_butterworth(cutoff=math.pi / 60)
    with pytest.raises(ConfigurationError):
        design_butterworth(cutoff=0.0)


def test_zero_in_zero_out():
    s = IIRFilterState.at_rest(COEFFS)
    for _ in range(10):
        s, y = filter_step(s, COEFFS, 0.0)
        assert y == 0.0


def test_step_response_converges():
    y = filter_sequence(COEFFS, np.ones(5000))
    assert abs(y[-1] - 1.0) < 1e-6


def test_sinusoid_at_cutoff():
    t = np.arange(20000)
    x = np.sin(3e-3 * 60 * t)
    y = filter_sequence(COEFFS, x)
    amp = np.abs(y[10000:]).max()
    assert amp == pytest.approx(1 / math.sqrt(2), rel=0.02)


def test_matches_scipy_lfilter():
    from scipy.signal import lfilter
    x = np.random.default_rng(0).normal(size=500)
    np.testing.assert_allclose(filter_sequence(COEFFS, x), lfilter(COEFFS.b, COEFFS.a, x), atol=1e-13)


def test_bank_matches_sequence():
    x = np.random.default_rng(1).normal(size=(200, 3))
    bank = FilterBank(COEFFS, 3)
    stepped = np.array([bank.step(row) for row in x])
    assert np.array_equal(stepped, filter_sequence(COEFFS, x))


def test_coeffs_text_roundtrip():
    back = IIRFilterCoeffs.from_text(COEFFS.to_text())
    assert np.array_equal(back.b, COEFFS.b) and np.array_equal(back.a, COEFFS.a)
    assert back.cutoff == COEFFS.cutoff


def test_kalman_values():
    P = stationary_variance(1.0, 100.0)
    assert P == pytest.approx((1 + math.sqrt(401)) / 2, rel=1e-15)
    assert P == pytest.approx(10.5125, abs=1e-4)
    assert kalman_gain(1.0, 100.0) == pytest.approx(0.0951, abs=1e-4)


def test_kalman_fixed_point():
    P = 1.0
    for _ in range(10000):
        P = P - P * P / (P + 100.0) + 1.0
    assert abs(P - stationary_variance(1.0, 100.0)) < 1e-12


def test_kalman_limits():
    assert kalman_gain(0.0, 5.0) == 0.0
    assert kalman_gain(5.0, 0.0) == 1.0
    with pytest.raises(ConfigurationError):
        kalman_gain(0.0, 0.0)
    with pytest.raises(ConfigurationError):
        kalman_gain(-1.0, 1.0)


def test_kalman_exact_model_tracks_truth():
    rng = np.random.default_rng(2)
    b, c = 0.069, 0.063
    kf = ScalarKalman(kalman_gain(1, 100), b, c, prior=0.0)
    y = 0.0
    for _ in range(100):
        ui, uo, d = rng.normal(size=3)
        post, _ = kalman_update(kf, y, ui, uo, d)
        assert post == pytest.approx(y, abs=1e-12)
        y = y + b * ui - c * (uo - d)


def test_kalman_offset_converges_geometrically():
    gain = kalman_gain(1, 100)
    kf = ScalarKalman(gain, 1.0, 1.0, prior=0.0)
    beta = 2.0
    for k in range(1, 50):
        post, _ = kf.update(beta, 0.0, 0.0, 0.0)
        assert beta - post == pytest.approx(beta * (1 - gain) ** k, rel=1e-10)


def test_kalman_zero_gain_ignores_measurement():
    kf = ScalarKalman(0.0, 1.0, 1.0, prior=0.5)
    post, prior = kf.update(100.0, 1.0, 0.0, 0.0)
    assert post == 0.5 and prior == 1.5


def test_cascaded_biquads_agree():
    from scipy.signal import butter, sosfilt
    sos = butter(3, 3e-3 * 60 / math.pi, output="sos")
    x = np.random.default_rng(3).normal(size=3000)
    np.testing.assert_allclose(filter_sequence(COEFFS, x), sosfilt(sos, x), atol=1e-9)


@settings(max_examples=50)
@given(st.floats(0.0, 10.0), st.floats(0.01, 10.0), st.floats(1.01, 3.0))
def test_gain_monotone_in_noise(R1, R2, f):
    g = kalman_gain(R1, R2)
    assert 0.0 <= g <= 1.0
    assert kalman_gain(R1 * f, R2) >= g
    assert kalman_gain(R1, R2 * f) <= g
