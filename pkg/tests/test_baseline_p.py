import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from canal_lq.baseline_p import (GAIN_FACTORS, PController, gain_margin, p_gains, p_step,
                                 phase_margin)
from canal_lq.errors import ConfigurationError
from canal_lq.plant import FirstOrderPoolParams


def test_pool_one_gain():
    k = p_gains(2, 10, 0.069)
    assert k == pytest.approx(math.pi / (8 * 12 * 0.069), rel=1e-15)
    assert k == pytest.approx(0.4743, abs=1e-4)


@settings(max_examples=200)
@given(st.integers(0, 40), st.integers(0, 40), st.floats(1e-4, 10))
def test_margins(tau, tau_bar, b):
    if tau + tau_bar == 0:
        return
    k = p_gains(tau, tau_bar, b)
    assert abs(gain_margin(k, tau, tau_bar, b) - 4.0) <= 1e-12
    assert abs(phase_margin(k, tau, tau_bar, b) - 3 * math.pi / 8) <= 1e-12


def test_phase_margin_degrees():
    k = p_gains(15, 10, 0.0213)
    assert math.degrees(phase_margin(k, 15, 10, 0.0213)) == pytest.approx(67.5, abs=1e-10)


def test_factor_scales_gain():
    assert p_gains(2, 10, 0.069, 1.5) == pytest.approx(1.5 * p_gains(2, 10, 0.069), rel=1e-15)
    assert GAIN_FACTORS == (0.25, 0.5, 1.0, 1.5, 2.0)


def test_rejections():
    with pytest.raises(ConfigurationError):
        p_gains(0, 0, 0.1)
    with pytest.raises(ConfigurationError):
        p_gains(1, 1, 0.0)


def test_step_examples():
    assert p_step(0.47, 0.0, 0.0, 0.0, 0.069, 0.063) == 0.0
    assert p_step(0.47, 0.0, 1.0, 0.0, 0.069, 0.063) == pytest.approx(0.063 / 0.069, rel=1e-15)
    assert 0.063 / 0.069 == pytest.approx(0.913, abs=1e-3)


def test_controller_uses_previous_downstream_flow():
    pools = [FirstOrderPoolParams(0.069, 0.063, 2, 10), FirstOrderPoolParams(0.0213, 0.0156, 15, 10)]
    ctl = PController(pools)
    u0 = ctl.step([1.0, 0.0], [0.0, 0.0])
    assert u0[1] == 0.0  # no downstream flow yet
    u1 = ctl.step([0.0, 0.0], [0.0, 0.0])
    assert u1[1] == pytest.approx(0.0156 / 0.0213 * u0[0], rel=1e-15)
    assert list(ctl.lookahead) == [2, 15]
