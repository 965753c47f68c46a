"""Closed-loop scenarios, cost evaluation and parameter sweeps.

A :class:`Scenario` fixes the network, weights, initial levels and planned
off-takes; :func:`run_scenario` simulates it on the pool models with one of
three controllers:

``structured``
    sweep controller designed on the first-order model, with Kalman
    estimation and low-pass filtered flows;
``lq3``
    full-state LQ with feed-forward designed on the third-order model;
``p``
    distant-downstream P control with feed-forward and filtered flows.

Off-takes are low-pass filtered before they reach the plant for every
controller.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .baseline_p import GAIN_FACTORS, PController
from .central_lq import ThirdOrderLQController
from .errors import ConfigurationError
from .filters import FilterBank, design_butterworth, filter_sequence, kalman_gain
from .plant import (NetworkModel, Plant, SYNTHESIS_TAU_BAR, build_network,
                    synthesis_network)
from .structured import StructuredLoop, default_horizon

CONTROLLERS = ("structured", "lq3", "p")


@dataclass
class Disturbance:
    """Off-take in ``pool`` over ``[start, stop)``.

    ``rate`` is the level change per sample it causes in the isolated
    first-order pool, so the flow is ``sign * rate / c_i``.
    """

    pool: int
    start: int
    stop: int
    rate: float = 1.0


@dataclass
class Scenario:
    n: int = 5
    kind: str = "alternating"
    order: int = 3
    controller: str = "structured"
    q: object = 1.0
    r: object = 0.3          # scalar: reservoir release only
    rho: object = 0.0
    initial_levels: Optional[list] = None
    disturbances: list = field(default_factory=list)
    steps: int = 3000
    p_factor: float = 1.0
    p_feedforward_filtered: bool = True
    kalman_R1: float = 1.0
    kalman_R2: float = 100.0
    use_kalman: bool = True
    cutoff: float = 3e-3
    tau_bar: int = SYNTHESIS_TAU_BAR
    offtake_sign: float = -1.0
    flip_initial: bool = False

    def __post_init__(self):
        self.disturbances = [d if isinstance(d, Disturbance) else Disturbance(**d)
                             for d in self.disturbances]
        if self.controller not in CONTROLLERS:
            raise ConfigurationError(f"unknown controller {self.controller!r}")

    def weights(self):
        n = self.n
        q = np.broadcast_to(np.asarray(self.q, float), (n,)).copy()
        r = np.asarray(self.r, float)
        if r.ndim == 0:
            r_vec = np.zeros(n)
            r_vec[-1] = float(r)
        else:
            r_vec = r.copy()
        rho = np.broadcast_to(np.asarray(self.rho, float), (n,)).copy()
        if q.shape != (n,) or r_vec.shape != (n,) or rho.shape != (n,):
            raise ConfigurationError("weight vectors must have one entry per pool")
        return q, r_vec, rho

    def levels0(self) -> np.ndarray:
        y0 = np.zeros(self.n) if self.initial_levels is None else np.asarray(self.initial_levels, float)
        if y0.shape != (self.n,):
            raise ConfigurationError(f"expected {self.n} initial levels")
        return -y0 if self.flip_initial else y0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "Scenario":
        return cls(**json.loads(text))

    @classmethod
    def load(cls, path) -> "Scenario":
        try:
            return cls.from_json(Path(path).read_text())
        except (TypeError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"bad scenario file {path}: {exc}") from exc


@dataclass
class CostBreakdown:
    total: float
    level: float
    input: float
    delta_u: float


@dataclass
class SimTrace:
    """Per-sample record; row ``t`` holds ``y[t]`` and the applied ``u[t]``, ``d[t]``."""

    y: np.ndarray
    u: np.ndarray
    d: np.ndarray
    q: np.ndarray
    r: np.ndarray
    rho: np.ndarray
    cum_level: np.ndarray = None
    cum_input: np.ndarray = None
    cum_deltau: np.ndarray = None

    def __post_init__(self):
        level = (self.q * self.y ** 2).sum(axis=1)
        inp = (self.r * self.u ** 2).sum(axis=1)
        du = np.zeros(len(self.u))
        du[1:] = (self.rho * np.diff(self.u, axis=0) ** 2).sum(axis=1)
        self.cum_level = np.cumsum(level)
        self.cum_input = np.cumsum(inp)
        self.cum_deltau = np.cumsum(du)

    @property
    def steps(self) -> int:
        return len(self.y)

    def cost(self) -> CostBreakdown:
        return evaluate_cost(self, self.q, self.r, self.rho)

    def to_csv(self) -> str:
        n = self.y.shape[1]
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["t"] + [f"y_{i}" for i in range(1, n + 1)] + [f"u_{i}" for i in range(1, n + 1)]
                   + [f"d_{i}" for i in range(1, n + 1)]
                   + ["cost_cum_level", "cost_cum_input", "cost_cum_deltau"])
        for t in range(self.steps):
            vals = list(self.y[t]) + list(self.u[t]) + list(self.d[t]) + [
                self.cum_level[t], self.cum_input[t], self.cum_deltau[t]]
            w.writerow([t] + [repr(float(v)) for v in vals])
        return out.getvalue()


def evaluate_cost(trace: SimTrace, q, r, rho=0.0) -> CostBreakdown:
    """Quadratic cost of a trace, truncated at its last sample."""
    n = trace.y.shape[1]
    q, r, rho = (np.asarray(w, float) for w in (q, r, rho))
    for w in (q, r, rho):
        if w.ndim and w.shape != (n,):
            raise ConfigurationError(f"weights need {n} entries, got {w.shape}")
    level = float(np.sum(q * trace.y ** 2))
    inp = float(np.sum(r * trace.u ** 2))
    du = float(np.sum(rho * np.diff(trace.u, axis=0) ** 2))
    return CostBreakdown(level + inp + du, level, inp, du)


def disturbance_schedule(scenario: Scenario, network: NetworkModel) -> np.ndarray:
    """Raw off-take flows, shape (steps, N)."""
    synth = synthesis_network(network, scenario.tau_bar) if network.order == 3 else network
    d = np.zeros((scenario.steps, scenario.n))
    for dist in scenario.disturbances:
        if not 1 <= dist.pool <= scenario.n:
            raise ConfigurationError(f"disturbance pool {dist.pool} outside 1..{scenario.n}")
        c = synth.pools[dist.pool - 1].c
        d[dist.start:dist.stop, dist.pool - 1] += scenario.offtake_sign * dist.rate / c
    return d


def run_scenario(scenario: Scenario) -> SimTrace:
    """Simulate one closed loop; deterministic for a given scenario."""
    s = scenario
    q, r, rho = s.weights()
    network = build_network(s.n, s.kind, s.order, tau_bar=s.tau_bar)
    synth = synthesis_network(network, s.tau_bar) if s.order == 3 else network
    coeffs = design_butterworth(cutoff=s.cutoff) if s.order == 3 else None
    d_raw = disturbance_schedule(s, network)
    d_app = filter_sequence(coeffs, d_raw) if coeffs is not None else d_raw.copy()
    plant = Plant(network, s.levels0())
    n, T = s.n, s.steps
    ys, us = np.empty((T, n)), np.empty((T, n))

    if s.controller == "structured":
        if np.any(r[:-1] != 0) or np.any(rho != 0):
            raise ConfigurationError("the structured controller needs r_i = 0 for i < N and rho = 0")
        last = max((dist.stop for dist in s.disturbances), default=0)
        gain = kalman_gain(s.kalman_R1, s.kalman_R2) if s.use_kalman else None
        loop = StructuredLoop(synth.pools, q, r[-1], coeffs, gain,
                              horizon=default_horizon(synth.pools, last))
        for k in range(n):
            sched = {t: d_raw[t, k] for t in np.flatnonzero(d_raw[:, k])}
            if sched:
                loop.announce(k + 1, sched)
        for t in range(T):
            ys[t] = plant.levels
            _, u_app, _ = loop.step(ys[t], d_raw[t])
            us[t] = u_app
            plant.step(u_app, d_app[t])
    elif s.controller == "lq3":
        if s.order != 3:
            raise ConfigurationError("lq3 needs the third-order network")
        ctl = ThirdOrderLQController(network, q, r, rho if np.any(rho) else None)
        ctl.plan(d_app)
        for t in range(T):
            ys[t] = plant.levels
            us[t] = ctl.control(t, plant)
            plant.step(us[t], d_app[t])
    else:
        ctl = PController(synth.pools, s.p_factor)
        planned = d_app if s.p_feedforward_filtered else d_raw
        ahead = ctl.lookahead
        bank = None if coeffs is None else FilterBank(coeffs, n)
        cols = np.arange(n)
        for t in range(T):
            ys[t] = plant.levels
            idx = t + ahead
            d_future = np.where(idx < T, planned[np.minimum(idx, T - 1), cols], 0.0)
            u = ctl.step(ys[t], d_future)
            us[t] = u if bank is None else bank.step(u)
            plant.step(us[t], d_app[t])
    return SimTrace(ys, us, d_app, q, r, rho)


def best_p(scenario: Scenario, factors: Sequence[float] = GAIN_FACTORS):
    """Run the P controller for every gain factor; returns ``(factor, trace)`` of the cheapest."""
    best = None
    for f in factors:
        trace = run_scenario(replace(scenario, controller="p", p_factor=f))
        c = trace.cost().total
        if best is None or c < best[2]:
            best = (f, trace, c)
    return best[0], best[1]


def compare_controllers(scenario: Scenario, controllers=CONTROLLERS,
                        factors: Sequence[float] = GAIN_FACTORS) -> dict:
    """Total cost per controller (best gain factor for P)."""
    out = {}
    for c in controllers:
        if c == "p":
            f, trace = best_p(scenario, factors)
            out["p"] = trace.cost().total
            out["p_factor"] = f
        else:
            out[c] = run_scenario(replace(scenario, controller=c)).cost().total
    return out


def disturbance_scenario(n: int, pool: int, window=(200, 400), steps: int = 3000,
                         kind: str = "homogeneous", rate: float = 1.0, **kw) -> Scenario:
    return Scenario(n=n, kind=kind, disturbances=[Disturbance(pool, window[0], window[1], rate)],
                    steps=steps, **kw)


def setpoint_scenario(n: int, steps: int = 3000, kind: str = "homogeneous", **kw) -> Scenario:
    y0 = np.zeros(n)
    y0[0], y0[-1] = -1.0, 1.0
    return Scenario(n=n, kind=kind, initial_levels=list(y0), steps=steps, **kw)


def step_offtake_scenario(**kw) -> Scenario:
    return Scenario(n=5, kind="alternating", initial_levels=[5.0, 0.0, 0.0, 0.0, -5.0],
                    disturbances=[Disturbance(1, 250, 450, 1.0)], **kw)


def sweep_network_size(sizes=(3, 5, 10, 15), controllers=CONTROLLERS, window=(200, 400),
                       steps: int = 3000, factors=GAIN_FACTORS) -> list:
    """Cost per controller with the off-take in pool ``N-1`` (pool 1 when N = 1)."""
    rows = []
    for n in sizes:
        sc = disturbance_scenario(n, max(n - 1, 1), window, steps)
        rows.append({"n": n, **compare_controllers(sc, controllers, factors)})
    return rows


def sweep_disturbance_location(n: int = 10, pools=None, controllers=CONTROLLERS,
                               window=(200, 400), steps: int = 3000, factors=GAIN_FACTORS) -> list:
    rows = []
    for pool in (range(1, n + 1) if pools is None else pools):
        sc = disturbance_scenario(n, pool, window, steps)
        rows.append({"pool": pool, **compare_controllers(sc, controllers, factors)})
    return rows


def sweep_tradeoff(n: int = 10, pool: int = 5, window=(200, 400), steps: int = 3000,
                   r_structured=(0.03, 0.1, 0.3, 1.0, 3.0, 10.0),
                   r_lq3=(0.01, 0.03, 0.1, 0.3, 1.0, 3.0),
                   rho_lq3=(0.1, 1.0, 10.0, 100.0, 1000.0)) -> list:
    """Level versus input trade-off points.

    Each row carries the unweighted sums of ``y^2``, ``u^2``, ``u_N^2`` and ``(du)^2``.
    ``r_lq3`` weights every gate; ``rho_lq3`` is used with ``r = 0.3`` on
    the reservoir only.
    """
    base = disturbance_scenario(n, pool, window, steps)
    runs = [("structured", "r_N", v, replace(base, controller="structured", r=v)) for v in r_structured]
    runs += [("lq3", "r_i", v, replace(base, controller="lq3", r=[v] * n)) for v in r_lq3]
    runs += [("lq3", "rho_i", v, replace(base, controller="lq3", rho=v)) for v in rho_lq3]
    rows = []
    for ctl, name, value, sc in runs:
        tr = run_scenario(sc)
        rows.append({"controller": ctl, "parameter": name, "value": value,
                     "sum_y2": float(np.sum(tr.y ** 2)), "sum_u2": float(np.sum(tr.u ** 2)),
                     "sum_uN2": float(np.sum(tr.u[:, -1] ** 2)),
                     "sum_du2": float(np.sum(np.diff(tr.u, axis=0) ** 2))})
    return rows


def rows_to_csv(rows: list) -> str:
    if not rows:
        return ""
    out = io.StringIO()
    keys = list(rows[0])
    for row in rows[1:]:
        keys += [k for k in row if k not in keys]
    w = csv.DictWriter(out, fieldnames=keys, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return out.getvalue()


def decay_step(trace: SimTrace, rel: float = 1e-9) -> Optional[int]:
    """First sample after which every level and flow stays below ``rel`` of its peak."""
    sig = np.hstack([np.abs(trace.y), np.abs(trace.u)])
    peak = sig.max()
    if peak == 0:
        return 0
    above = np.flatnonzero((sig > rel * peak).any(axis=1))
    if len(above) == 0:
        return 0
    last = above[-1] + 1
    return int(last) if last < trace.steps else None
