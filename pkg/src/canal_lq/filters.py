"""Low-pass filtering of gate flows and off-takes, and the per-gate Kalman filter."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .errors import ConfigurationError

DEFAULT_CUTOFF = 3e-3  # rad/s
SAMPLE_PERIOD = 60.0  # s


@dataclass(frozen=True)
class IIRFilterCoeffs:
    """Transfer function ``b(z^-1) / a(z^-1)`` with ``a[0] == 1``."""

    b: np.ndarray
    a: np.ndarray
    cutoff: float = DEFAULT_CUTOFF
    sample_period: float = SAMPLE_PERIOD

    @property
    def order(self) -> int:
        return len(self.a) - 1

    @property
    def dc_gain(self) -> float:
        return float(np.sum(self.b) / np.sum(self.a))

    def response(self, omega):
        """Complex frequency response at angular frequencies ``omega`` [rad/s]."""
        z = np.exp(1j * np.asarray(omega, float) * self.sample_period)
        zi = 1.0 / z
        return np.polyval(self.b[::-1], zi) / np.polyval(self.a[::-1], zi)

    def to_text(self) -> str:
        fmt = lambda xs: " ".join(f"{x:.17g}" for x in xs)
        return (f"cutoff {self.cutoff:.17g}\nsample_period {self.sample_period:.17g}\n"
                f"b {fmt(self.b)}\na {fmt(self.a)}\n")

    @classmethod
    def from_text(cls, text: str) -> "IIRFilterCoeffs":
        fields = {}
        for line in text.strip().splitlines():
            key, *vals = line.split()
            fields[key] = [float(v) for v in vals]
        return cls(b=np.array(fields["b"]), a=np.array(fields["a"]),
                   cutoff=fields["cutoff"][0], sample_period=fields["sample_period"][0])


def design_butterworth(order: int = 3, cutoff: float = DEFAULT_CUTOFF,
                       sample_period: float = SAMPLE_PERIOD) -> IIRFilterCoeffs:
    """Discrete Butterworth low-pass via the pre-warped bilinear transform.

    ``cutoff`` is the -3 dB frequency in rad/s; it must lie below Nyquist.
    """
    nyquist = math.pi / sample_period
    if not 0.0 < cutoff < nyquist:
        raise ConfigurationError(f"cutoff {cutoff} rad/s must lie in (0, {nyquist})")
    b, a = signal.butter(order, cutoff / nyquist)
    b, a = b / a[0], a / a[0]
    # Rescale so the DC gain is one to rounding.
    b = b * (np.sum(a) / np.sum(b))
    return IIRFilterCoeffs(b=b, a=a, cutoff=cutoff, sample_period=sample_period)


@dataclass
class IIRFilterState:
    """Direct-form II transposed delay line."""

    z: np.ndarray

    @classmethod
    def at_rest(cls, coeffs: IIRFilterCoeffs, value: float = 0.0) -> "IIRFilterState":
        return cls(signal.lfilter_zi(coeffs.b, coeffs.a) * value)


def filter_step(state: IIRFilterState, coeffs: IIRFilterCoeffs, x: float):
    """One sample of the filter; returns ``(state, y)`` with the state updated in place."""
    b, a, z = coeffs.b, coeffs.a, state.z
    y = b[0] * x + z[0]
    n = len(z)
    for k in range(n - 1):
        z[k] = b[k + 1] * x + z[k + 1] - a[k + 1] * y
    z[n - 1] = b[n] * x - a[n] * y
    return state, float(y)


class FilterBank:
    """One filter per channel, all sharing a single design."""

    def __init__(self, coeffs: IIRFilterCoeffs, n: int):
        self.coeffs = coeffs
        self.states = [IIRFilterState.at_rest(coeffs) for _ in range(n)]

    def step(self, x) -> np.ndarray:
        return np.array([filter_step(s, self.coeffs, xi)[1] for s, xi in zip(self.states, x)])


def filter_sequence(coeffs: IIRFilterCoeffs, x) -> np.ndarray:
    """Filter a whole sequence (along axis 0) from rest.

    Uses the same per-sample recursion as :func:`filter_step`, so the result
    is bit-identical to stepping a :class:`FilterBank`.
    """
    x = np.asarray(x, float)
    flat = x.reshape(len(x), -1)
    bank = FilterBank(coeffs, flat.shape[1])
    return np.array([bank.step(row) for row in flat]).reshape(x.shape)


def stationary_variance(R1: float, R2: float) -> float:
    """Fixed point ``P`` of ``P = P - P^2/(P + R2) + R1``."""
    if R1 < 0 or R2 < 0:
        raise ConfigurationError("noise variances must be non-negative")
    if R1 == 0 and R2 == 0:
        raise ConfigurationError("R1 and R2 cannot both be zero")
    return 0.5 * (R1 + math.sqrt(R1 * R1 + 4.0 * R1 * R2))


def kalman_gain(R1: float, R2: float) -> float:
    """Stationary Kalman gain for a random-walk level with measurement noise."""
    P = stationary_variance(R1, R2)
    return P / (P + R2)


@dataclass
class ScalarKalman:
    """Stationary Kalman filter for one pool's first-order model.

    ``prior`` is the a-priori level estimate for the current sample; the
    controller consumes it before the measurement update.
    """

    gain: float
    b: float
    c: float
    prior: float = 0.0
    posterior: float = field(default=0.0, init=False)

    @classmethod
    def from_noise(cls, R1, R2, b, c, prior=0.0):
        return cls(kalman_gain(R1, R2), b, c, prior)

    def update(self, y_meas, u_in_lagged, u_out_lagged, d_lagged):
        """Correct with ``y_meas`` and predict one step.

        The lagged arguments are ``u_i[t-tau-tau_bar]``, ``u_{i-1}[t-tau_bar]``
        and ``d_i[t-tau_bar]``.  Returns ``(posterior, next_prior)``.
        """
        post = self.prior + self.gain * (y_meas - self.prior)
        self.posterior = post
        self.prior = post + self.b * u_in_lagged - self.c * (u_out_lagged - d_lagged)
        return post, self.prior


def kalman_update(kf: ScalarKalman, y_meas, u_in_lagged, u_out_lagged, d_lagged):
    return kf.update(y_meas, u_in_lagged, u_out_lagged, d_lagged)
