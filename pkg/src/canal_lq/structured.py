"""Structured optimal LQ controller computed by serial sweeps along the string.

The controller is optimal for the first-order synthesis model::

    y_i[t+1] = y_i[t] + b_i u_i[t-tau_i-tau_bar] - c_i (u_{i-1}[t-tau_bar] - d_i[t-tau_bar])

with cost ``sum_t sum_i q_i y_i^2 + r u_N^2``.  Parameters come from one
upstream sweep (:func:`compute_params`); online, every sample runs one
upstream sweep of scalar messages followed by a downstream dispatch of the
flows (:class:`StructuredController`).

Gate ``i`` sits at the downstream end of pool ``i`` and decides ``u_{i-1}``;
the reservoir gate (index ``N+1`` in message logs) decides ``u_N``.  Inside
the agents every quantity is in rescaled units: ``z_i = b_hat_{i-1}/c_i y_i``,
``u_hat_i = b_hat_i u_i``, ``d_hat_1 = c_1 d_1`` and ``d_hat_i = b_hat_{i-1} d_i``,
which turns the model into unit-coefficient form.
"""
from __future__ import annotations

import csv
import io
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError, ProtocolError
from .filters import FilterBank, IIRFilterCoeffs, ScalarKalman
from .plant import FirstOrderPoolParams


@dataclass
class ControlParams:
    """Output of the parameter sweep.

    ``q_tilde`` and ``r_tilde`` are the weights of the rescaled problem;
    ``q`` and ``r`` are kept for reference.
    """

    gamma: np.ndarray
    b_hat: np.ndarray
    q_tilde: np.ndarray
    r_tilde: float
    X: float
    g: float
    q: np.ndarray
    r: float

    def to_text(self) -> str:
        out = io.StringIO()
        out.write("gate,gamma,b_hat,q,q_tilde\n")
        for i, row in enumerate(zip(self.gamma, self.b_hat, self.q, self.q_tilde), start=1):
            out.write(f"{i}," + ",".join(f"{x:.17g}" for x in row) + "\n")
        out.write(f"# r {self.r:.17g}\n# r_tilde {self.r_tilde:.17g}\n"
                  f"# X {self.X:.17g}\n# g {self.g:.17g}\n")
        return out.getvalue()


def compute_params(q, r, b, c) -> ControlParams:
    """Run the upstream parameter sweep for weights ``q``, ``r`` and coefficients ``b``, ``c``."""
    q = np.asarray(q, float)
    b = np.asarray(b, float)
    c = np.asarray(c, float)
    n = len(q)
    if b.shape != (n,) or c.shape != (n,):
        raise ConfigurationError("q, b and c must have one entry per pool")
    if np.any(q <= 0) or r <= 0 or np.any(b <= 0) or np.any(c <= 0):
        raise ConfigurationError("weights and pool coefficients must be positive")
    b_hat = np.empty(n)
    q_tilde = np.empty(n)
    gamma = np.empty(n)
    b_hat[0] = b[0]
    q_tilde[0] = q[0]
    gamma[0] = q[0]
    for i in range(1, n):
        b_hat[i] = b[i] / c[i] * b_hat[i - 1]
        q_tilde[i] = c[i] ** 2 / b_hat[i - 1] ** 2 * q[i]
        gamma[i] = gamma[i - 1] * q_tilde[i] / (gamma[i - 1] + q_tilde[i])
    r_tilde = r / b_hat[-1] ** 2
    gN = gamma[-1]
    X = -gN / 2.0 + math.sqrt(gN * r_tilde + gN * gN / 4.0)
    return ControlParams(gamma, b_hat, q_tilde, r_tilde, X, X / (X + gN), q, float(r))


# -- messages ---------------------------------------------------------------

@dataclass(frozen=True)
class UpstreamM:
    m: float


@dataclass(frozen=True)
class UpstreamD:
    time: int
    value: float


@dataclass(frozen=True)
class DownstreamD:
    time: int
    value: float


@dataclass(frozen=True)
class DownstreamU:
    u: float


class Channel:
    """In-process neighbour links with deterministic delivery and an optional log."""

    def __init__(self, log: bool = False):
        self.log_enabled = log
        self.log = []
        self.inboxes = {}
        self.tick = 0

    def send(self, sender: int, receiver: int, msg) -> None:
        if abs(sender - receiver) != 1:
            raise ProtocolError(f"gate {sender} cannot message non-neighbour {receiver}")
        self.inboxes.setdefault(receiver, []).append(msg)
        if self.log_enabled:
            self.log.append((self.tick, sender, receiver, msg))

    def take(self, receiver: int, kind) -> list:
        box = self.inboxes.get(receiver, [])
        got = [m for m in box if isinstance(m, kind)]
        self.inboxes[receiver] = [m for m in box if not isinstance(m, kind)]
        return got

    def log_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["tick", "from", "to", "kind", "index", "value"])
        for tick, s, r, msg in self.log:
            index = getattr(msg, "time", "")
            value = next(getattr(msg, k) for k in ("m", "value", "u") if hasattr(msg, k))
            w.writerow([tick, s, r, type(msg).__name__, index, repr(float(value))])
        return out.getvalue()


class GateAgent:
    """Gate ``i``: stores its flow histories and aggregate off-takes ``D_i[s]``."""

    def __init__(self, i: int, tau: int, tau_bar: int, sigma: int, sigma_up: int,
                 y_scale: float, d_scale: float, gamma: float, q_tilde: float):
        self.i = i
        self.tau = tau
        self.tau_bar = tau_bar
        self.sigma = sigma
        self.sigma_up = sigma_up
        self.y_scale = y_scale
        self.d_scale = d_scale
        self.gamma = gamma
        self.q_tilde = q_tilde
        # hist_in[s-1] = u_hat_i[t-s]; hist_out[s-1] = u_hat_{i-1}[t-s]; d_hist[s-1] = d_hat_i[t-s]
        self.hist_in = deque([0.0] * (tau + tau_bar), maxlen=tau + tau_bar)
        self.hist_out = deque([0.0] * tau_bar, maxlen=tau_bar)
        self.d_hist = deque([0.0] * tau_bar, maxlen=tau_bar)
        self.d = {}        # committed off-takes d_hat_i[s], s >= t
        self.pending = {}  # announced but not yet swept
        self.D = {}        # D_i[s] for s >= t + sigma_i
        self.z = 0.0
        self.p = 0.0
        self.m = 0.0
        self.u_out = 0.0

    def announce(self, schedule: dict) -> None:
        for s, val in schedule.items():
            self.pending[int(s)] = self.d_scale * float(val)

    def sweep_D(self, t: int, received: list, channel: Channel, upstream: int) -> None:
        got = {msg.time: msg.value for msg in received}
        dirty = set(got) | {s + self.sigma for s in self.pending}
        for s in sorted(dirty):
            ts = s - self.sigma
            old = self.d.get(ts, 0.0)
            new = self.pending.get(ts, old)
            if s in got:
                self.D[s] = got[s] + new
            else:
                self.D[s] = self.D.get(s, 0.0) + (new - old)
            if s >= t + self.sigma_up:
                channel.send(self.i, upstream, UpstreamD(s, self.D[s]))
        for ts, val in self.pending.items():
            self.d[ts] = val
        self.pending.clear()

    def local_terms(self, t: int, y: float) -> None:
        self.z = self.y_scale * y
        tau, tb = self.tau, self.tau_bar
        h = self.hist_in
        self.p = (self.z + sum(h[s - 1] for s in range(tau, tau + tb + 1))
                  - sum(self.hist_out) + self.d.get(t, 0.0) + sum(self.d_hist))

    def compute_m(self, t: int, m_down: Optional[float]) -> float:
        h, tau, D = self.hist_in, self.tau, self.D
        if m_down is None:
            self.m = (self.z + sum(h) + sum(self.d_hist)
                      + sum(D.get(t + s, 0.0) for s in range(tau + 1)))
        else:
            self.m = (m_down + self.p + sum(h[s - 1] for s in range(1, tau))
                      + sum(D.get(t + self.sigma + s, 0.0) for s in range(1, tau + 1)))
        return self.m

    def control(self, m_down: float) -> float:
        ratio = self.gamma / self.q_tilde
        self.u_out = (1.0 - ratio) * self.p - ratio * m_down
        return self.u_out

    def advance(self, t: int, u_in: float) -> None:
        self.hist_in.appendleft(u_in)
        self.hist_out.appendleft(self.u_out)
        self.d_hist.appendleft(self.d.pop(t, 0.0))
        low = t + 1 + self.sigma
        for s in [s for s in self.D if s < low]:
            del self.D[s]


class ReservoirGate:
    """Decides the reservoir release from ``m_N`` and its copy of ``D_N``."""

    def __init__(self, index: int, sigma_N: int, tau_N: int, X: float, r_tilde: float, g: float):
        self.index = index
        self.sigma_N = sigma_N
        self.tau_N = tau_N
        self.X = X
        self.r_tilde = r_tilde
        self.g = g
        self.D = {}
        self.u = 0.0

    def receive(self, received: list) -> None:
        for msg in received:
            self.D[msg.time] = msg.value

    def control(self, t: int, m_N: float) -> float:
        base = t + self.sigma_N
        ff = 0.0
        for s in sorted(self.D):
            k = s - base
            if k > self.tau_N:
                ff += self.D[s] * self.g ** (k - self.tau_N)
        self.u = -(self.X / self.r_tilde) * (m_N + ff)
        return self.u

    def advance(self, t: int) -> None:
        low = t + 1 + self.sigma_N + self.tau_N + 1
        for s in [s for s in self.D if s < low]:
            del self.D[s]


class StructuredController:
    """Online sweep controller for a string of first-order pools.

    ``horizon`` bounds how far ahead off-takes may be announced; ``None``
    leaves it unbounded.  ``tick`` returns the flows ``u_1..u_N`` in
    physical units.
    """

    def __init__(self, pools: Sequence[FirstOrderPoolParams], q, r: float,
                 horizon: Optional[int] = None, log_messages: bool = False):
        pools = list(pools)
        n = len(pools)
        if n < 1:
            raise ConfigurationError("need at least one pool")
        tau_bars = {p.tau_bar for p in pools}
        if len(tau_bars) != 1:
            raise ConfigurationError("all pools must share tau_bar")
        if any(p.tau < 1 for p in pools):
            raise ConfigurationError("the sweep needs tau_i >= 1 for every pool")
        q = np.broadcast_to(np.asarray(q, float), (n,)).copy()
        self.pools = pools
        self.n = n
        self.tau_bar = tau_bars.pop()
        self.horizon = horizon
        self.params = compute_params(q, r, [p.b for p in pools], [p.c for p in pools])
        par = self.params
        self.sigma = np.concatenate([[0], np.cumsum([p.tau for p in pools])]).astype(int)
        self.gates = []
        for k, p in enumerate(pools):
            y_scale = 1.0 if k == 0 else par.b_hat[k - 1] / p.c
            d_scale = p.c if k == 0 else par.b_hat[k - 1]
            self.gates.append(GateAgent(k + 1, p.tau, self.tau_bar, int(self.sigma[k]),
                                        int(self.sigma[k + 1]), y_scale, d_scale,
                                        par.gamma[k], par.q_tilde[k]))
        self.reservoir = ReservoirGate(n + 1, int(self.sigma[n - 1]), pools[-1].tau,
                                       par.X, par.r_tilde, par.g)
        self.channel = Channel(log_messages)
        self.t = 0

    def announce(self, pool: int, schedule: dict) -> None:
        """Announce off-takes ``{time: d}`` at gate ``pool`` (1-based)."""
        if not 1 <= pool <= self.n:
            raise ConfigurationError(f"pool {pool} outside 1..{self.n}")
        for s in schedule:
            if s < self.t:
                raise ConfigurationError(f"off-take at time {s} is already in the past")
            if self.horizon is not None and s > self.t + self.horizon:
                raise ConfigurationError(f"off-take at time {s} beyond horizon t+{self.horizon}")
        self.gates[pool - 1].announce(schedule)

    def tick(self, y) -> np.ndarray:
        y = np.asarray(y, float)
        if y.shape != (self.n,):
            raise ProtocolError(f"expected {self.n} levels, got shape {y.shape}")
        t, ch, gates, n = self.t, self.channel, self.gates, self.n
        ch.tick = t
        if any(ch.inboxes.values()):
            raise ProtocolError("undelivered messages from a previous tick")

        # shift of unchanged aggregates, one message per gate
        for k in range(n - 1, 0, -1):
            g = gates[k]
            s = t + g.sigma
            ch.send(g.i, g.i - 1, DownstreamD(s, g.D.get(s, 0.0) - g.d.get(t, 0.0)))
        for k in range(n - 1):
            for msg in ch.take(k + 1, DownstreamD):
                gates[k].D[msg.time] = msg.value

        # serial upstream sweep
        m_prev = None
        for k, g in enumerate(gates):
            upstream = g.i + 1
            g.sweep_D(t, ch.take(g.i, UpstreamD), ch, upstream)
            g.local_terms(t, y[k])
            if k > 0:
                m_prev = ch.take(g.i, UpstreamM)[0].m
            ch.send(g.i, upstream, UpstreamM(g.compute_m(t, m_prev)))
        res = self.reservoir
        res.receive(ch.take(res.index, UpstreamD))
        m_N = ch.take(res.index, UpstreamM)[0].m

        u_hat = np.empty(n)
        for k in range(1, n):
            u_hat[k - 1] = gates[k].control(gates[k - 1].m)
        u_hat[n - 1] = res.control(t, m_N)

        # downstream dispatch
        ch.send(res.index, n, DownstreamU(u_hat[n - 1]))
        for k in range(1, n):
            ch.send(gates[k].i, gates[k].i - 1, DownstreamU(gates[k].u_out))
        for g in gates:
            (msg,) = ch.take(g.i, DownstreamU)
            g.advance(t, msg.u)
        res.advance(t)
        self.t += 1
        return u_hat / self.params.b_hat

    def aggregate(self, pool: int) -> dict:
        """Current ``D_i[s]`` of gate ``pool`` in rescaled units."""
        return dict(self.gates[pool - 1].D)

    def message_log_csv(self) -> str:
        return self.channel.log_csv()


def default_horizon(pools: Sequence[FirstOrderPoolParams], last_disturbance: int) -> int:
    return int(last_disturbance + sum(p.tau for p in pools))


class StructuredLoop:
    """Structured controller wrapped with Kalman estimation and low-pass filtering.

    At every sample the controller sees the a-priori Kalman estimates, the
    computed flows and the off-takes pass through the shared low-pass filter
    before reaching the plant, and the Kalman filters are then corrected
    with the measurements and propagated with the unfiltered flows.
    ``coeffs=None`` disables filtering and ``gain=None`` feeds the
    measurements straight through.
    """

    def __init__(self, pools: Sequence[FirstOrderPoolParams], q, r: float,
                 coeffs: Optional[IIRFilterCoeffs] = None, gain: Optional[float] = None,
                 horizon: Optional[int] = None, log_messages: bool = False):
        self.controller = StructuredController(pools, q, r, horizon, log_messages)
        self.pools = list(pools)
        n = len(self.pools)
        tb = self.controller.tau_bar
        self.kalman = None if gain is None else [ScalarKalman(gain, p.b, p.c) for p in self.pools]
        self.u_filter = None if coeffs is None else FilterBank(coeffs, n)
        self.d_filter = None if coeffs is None else FilterBank(coeffs, n)
        self._u_hist = [deque([0.0] * (p.tau + tb + 1), maxlen=p.tau + tb + 1) for p in self.pools]
        self._d_hist = [deque([0.0] * (tb + 1), maxlen=tb + 1) for _ in self.pools]
        self._started = False

    def announce(self, pool: int, schedule: dict) -> None:
        self.controller.announce(pool, schedule)

    def estimates(self, y_meas) -> np.ndarray:
        if self.kalman is None:
            return np.asarray(y_meas, float)
        if not self._started:
            for kf, y in zip(self.kalman, y_meas):
                kf.prior = float(y)
        return np.array([kf.prior for kf in self.kalman])

    def step(self, y_meas, d_raw):
        """One sample; returns ``(u, u_applied, d_applied)``."""
        y_meas = np.asarray(y_meas, float)
        d_raw = np.asarray(d_raw, float)
        u = self.controller.tick(self.estimates(y_meas))
        self._started = True
        tb = self.controller.tau_bar
        for k in range(len(self.pools)):
            self._u_hist[k].appendleft(u[k])
            self._d_hist[k].appendleft(d_raw[k])
        if self.kalman is not None:
            for k, (kf, p) in enumerate(zip(self.kalman, self.pools)):
                u_out = self._u_hist[k - 1][tb] if k > 0 else 0.0
                kf.update(y_meas[k], self._u_hist[k][p.tau + tb], u_out, self._d_hist[k][tb])
        u_app = u if self.u_filter is None else self.u_filter.step(u)
        d_app = d_raw if self.d_filter is None else self.d_filter.step(d_raw)
        return u, u_app, d_app


def closed_loop_controller_step(loop: StructuredLoop, y_meas, d_raw):
    return loop.step(y_meas, d_raw)
