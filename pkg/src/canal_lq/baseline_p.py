"""Distant-downstream proportional control with feed-forward.

The flow into pool ``i`` regulates the level at its downstream end::

    u_i[t] = -k_i y_i[t] + k_ff c_i/b_i (u_{i-1}[t-1] - d_i[t+tau_i])

The downstream flow is fed forward one sample late so each gate only needs
values its neighbour has already sent.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .errors import ConfigurationError
from .plant import FirstOrderPoolParams

GAIN_FACTORS = (0.25, 0.5, 1.0, 1.5, 2.0)


def p_gains(tau: int, tau_bar: int, b: float, factor: float = 1.0) -> float:
    """Gain giving a gain margin of 4 on the delayed-integrator model (times ``factor``)."""
    if b <= 0:
        raise ConfigurationError("b must be positive")
    if tau < 0 or tau_bar < 0:
        raise ConfigurationError("delays must be non-negative")
    if tau + tau_bar == 0:
        raise ConfigurationError("total delay must be positive for the margin design")
    return factor * math.pi / (2.0 * (tau + tau_bar) * b) / 4.0


def gain_margin(k: float, tau: int, tau_bar: int, b: float) -> float:
    return math.pi / (2.0 * (tau + tau_bar) * b * k)


def phase_margin(k: float, tau: int, tau_bar: int, b: float) -> float:
    """Phase margin in radians of ``k b/s exp(-(tau+tau_bar)s)``."""
    return math.pi / 2.0 - (tau + tau_bar) * b * k


def p_step(k: float, y: float, u_down_prev: float, d_future: float, b: float, c: float,
           k_ff: float = 1.0) -> float:
    return -k * y + k_ff * (c / b) * (u_down_prev - d_future)


class PController:
    """Bank of per-gate P controllers designed on first-order synthesis pools."""

    def __init__(self, pools: Sequence[FirstOrderPoolParams], factor: float = 1.0,
                 k_ff: float = 1.0):
        self.pools = list(pools)
        self.k = np.array([p_gains(p.tau, p.tau_bar, p.b, factor) for p in self.pools])
        self.k_ff = k_ff
        self.factor = factor
        self.u_prev = np.zeros(len(self.pools))

    @property
    def lookahead(self) -> np.ndarray:
        """``tau_i``: how far ahead each gate reads the planned off-take."""
        return np.array([p.tau for p in self.pools])

    def step(self, y, d_future) -> np.ndarray:
        """``d_future[i]`` is the planned ``d_i[t + tau_i]``."""
        u = np.empty(len(self.pools))
        for i, p in enumerate(self.pools):
            down = self.u_prev[i - 1] if i > 0 else 0.0
            u[i] = p_step(self.k[i], y[i], down, d_future[i], p.b, p.c, self.k_ff)
        self.u_prev = u
        return u
