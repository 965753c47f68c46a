"""Discrete-time pool models and network assembly.

Levels and flows are relative to their nominal operating point and the
sample period is one minute.  Pool 1 is the most downstream pool and pool
``N`` is fed by the reservoir, so pool ``i`` has inflow ``u_i``, outflow
``u_{i-1}`` and off-take ``d_i``.  The flow over the last gate is held at
its nominal value, i.e. ``u_0 = 0``.

Each pool keeps its history as ring buffers indexed by lag (index 0 is the
current sample), which keeps every step a literal transcription of the
difference equation.
"""
from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .errors import ConfigurationError

# Delays of the first-order synthesis model, obtained by the delay fit in
# ``canal_lq.ident`` (the table rows carry the original identification delays).
SYNTHESIS_TAU = {1: 2, 2: 15}
SYNTHESIS_TAU_BAR = 10


@dataclass(frozen=True)
class ThirdOrderPoolParams:
    b1: float
    b2: float
    b3: float
    c1: float
    c2: float
    c3: float
    alpha1: float
    alpha2: float
    tau: int

    order = 3

    def __post_init__(self):
        vals = [self.b1, self.b2, self.b3, self.c1, self.c2, self.c3,
                self.alpha1, self.alpha2]
        if not np.all(np.isfinite(vals)):
            raise ConfigurationError("pool coefficients must be finite")
        if int(self.tau) != self.tau or self.tau < 0:
            raise ConfigurationError(f"tau must be a non-negative integer, got {self.tau}")

    @property
    def b(self) -> float:
        return self.b1

    @property
    def c(self) -> float:
        return self.c1


@dataclass(frozen=True)
class FirstOrderPoolParams:
    b: float
    c: float
    tau: int
    tau_bar: int = 0

    order = 1

    def __post_init__(self):
        if not (self.b > 0 and self.c > 0):
            raise ConfigurationError("first-order pools need b > 0 and c > 0")
        for name in ("tau", "tau_bar"):
            v = getattr(self, name)
            if int(v) != v or v < 0:
                raise ConfigurationError(f"{name} must be a non-negative integer, got {v}")


PoolParams = Union[ThirdOrderPoolParams, FirstOrderPoolParams]


@dataclass(frozen=True)
class NetworkModel:
    """An ordered string of pools; ``pools[0]`` is pool 1 (most downstream)."""

    pools: tuple
    kind: str = "homogeneous"

    @property
    def n(self) -> int:
        return len(self.pools)

    @property
    def order(self) -> int:
        orders = {p.order for p in self.pools}
        if len(orders) != 1:
            raise ConfigurationError("mixed-order networks are not supported")
        return orders.pop()


def load_pool_table(path: Union[str, Path, None] = None) -> dict:
    """Read pool parameters from a CSV with columns pool, order, b1..b3, c1..c3, alpha1, alpha2, tau.

    Returns a dict keyed by ``(pool, order)``.  Third-order rows become
    :class:`ThirdOrderPoolParams`; first-order rows become
    :class:`FirstOrderPoolParams` carrying the table delay and ``tau_bar=0``.
    """
    if path is None:
        text = resources.files("canal_lq").joinpath("data/pools.csv").read_text()
    else:
        text = Path(path).read_text()
    table = {}
    for row in csv.DictReader(text.splitlines()):
        pool, order = int(row["pool"]), int(row["order"])
        tau = int(row["tau"])
        if order == 3:
            p = ThirdOrderPoolParams(*(float(row[k]) for k in
                                       ("b1", "b2", "b3", "c1", "c2", "c3", "alpha1", "alpha2")),
                                     tau=tau)
        elif order == 1:
            p = FirstOrderPoolParams(b=float(row["b1"]), c=float(row["c1"]), tau=tau)
        else:
            raise ConfigurationError(f"unsupported order {order} in pool table")
        table[pool, order] = p
    return table


def synthesis_pool(model: int, tau=None, tau_bar=SYNTHESIS_TAU_BAR, b1_factor=1.0,
                   table=None) -> FirstOrderPoolParams:
    """First-order synthesis model for pool model 1 or 2.

    ``b1_factor`` optionally rescales the inflow coefficient on top of the
    table value (the table is used as-is by default).
    """
    table = load_pool_table() if table is None else table
    base = table[model, 1]
    return FirstOrderPoolParams(b=base.b * b1_factor, c=base.c,
                                tau=SYNTHESIS_TAU[model] if tau is None else tau,
                                tau_bar=tau_bar)


def build_network(n: int, kind: str = "homogeneous", order: int = 3, table=None,
                  tau_bar: int = SYNTHESIS_TAU_BAR) -> NetworkModel:
    """Assemble a string of ``n`` pools.

    ``alternating`` uses pool model 1 for odd pool indices and pool model 2
    for even ones; ``homogeneous`` uses pool model 1 throughout.  Order 1
    networks use the synthesis delays.
    """
    if n < 1:
        raise ConfigurationError("a network needs at least one pool")
    if kind not in ("homogeneous", "alternating"):
        raise ConfigurationError(f"unknown network kind {kind!r}")
    table = load_pool_table() if table is None else table
    pools = []
    for i in range(1, n + 1):
        model = 1 if (kind == "homogeneous" or i % 2 == 1) else 2
        if order == 3:
            pools.append(table[model, 3])
        elif order == 1:
            pools.append(synthesis_pool(model, tau_bar=tau_bar, table=table))
        else:
            raise ConfigurationError(f"order must be 1 or 3, got {order}")
    return NetworkModel(tuple(pools), kind)


def synthesis_network(network: NetworkModel, tau_bar: int = SYNTHESIS_TAU_BAR,
                      table=None) -> NetworkModel:
    """First-order synthesis counterpart of a third-order network."""
    table = load_pool_table() if table is None else table
    pools = []
    for p in network.pools:
        if p.order == 1:
            pools.append(p)
            continue
        model = next(k for (k, o), v in table.items() if o == 3 and v == p)
        pools.append(synthesis_pool(model, tau_bar=tau_bar, table=table))
    return NetworkModel(tuple(pools), network.kind)


def dc_slope(params: PoolParams, channel: str = "inflow") -> float:
    """Steady ramp rate of the level per unit constant flow on ``channel``."""
    if channel not in ("inflow", "outflow"):
        raise ConfigurationError(f"channel must be 'inflow' or 'outflow', got {channel!r}")
    if params.order == 1:
        return params.b if channel == "inflow" else params.c
    denom = 1.0 - params.alpha2
    if denom == 0.0:
        raise ZeroDivisionError("alpha2 = 1 makes the ramp slope singular")
    if channel == "inflow":
        return (params.b1 - params.b2 + params.b3) / denom
    return (params.c1 - params.c2 + params.c3) / denom


@dataclass
class PoolSimState:
    """Ring buffers of one pool; index 0 of every buffer is the latest sample.

    ``y`` holds ``y[t], y[t-1], y[t-2]``.  The flow buffers hold values up to
    and including the previous step; the step functions push the new
    samples before evaluating the recursion.
    """

    y: deque
    u_in: deque
    u_out: deque
    d: deque

    @classmethod
    def at_rest(cls, params: PoolParams, level: float = 0.0) -> "PoolSimState":
        if params.order == 3:
            in_depth, out_depth = params.tau + 3, 3
        else:
            in_depth, out_depth = params.tau + params.tau_bar + 1, params.tau_bar + 1
        return cls(
            y=deque([float(level)] * 3, maxlen=3),
            u_in=deque([0.0] * in_depth, maxlen=in_depth),
            u_out=deque([0.0] * out_depth, maxlen=out_depth),
            d=deque([0.0] * out_depth, maxlen=out_depth),
        )

    @property
    def level(self) -> float:
        return self.y[0]

    def copy(self) -> "PoolSimState":
        return PoolSimState(*(deque(b, maxlen=b.maxlen) for b in (self.y, self.u_in, self.u_out, self.d)))


def _push(state: PoolSimState, u_in_new, u_out_new, d_new, in_need, out_need):
    if state.u_in.maxlen < in_need or state.u_out.maxlen < out_need or state.d.maxlen < out_need:
        raise ConfigurationError("pool history is too short for the model delays")
    state.u_in.appendleft(float(u_in_new))
    state.u_out.appendleft(float(u_out_new))
    state.d.appendleft(float(d_new))


def step_third_order(state: PoolSimState, params: ThirdOrderPoolParams,
                     u_in_new: float, u_out_new: float, d_new: float) -> PoolSimState:
    """Advance a third-order pool one sample (in place; the state is returned)."""
    tau = params.tau
    _push(state, u_in_new, u_out_new, d_new, tau + 3, 3)
    ui, uo, d, y = state.u_in, state.u_out, state.d, state.y
    y_next = (params.b1 * ui[tau] - params.b2 * ui[tau + 1] + params.b3 * ui[tau + 2]
              - params.c1 * (uo[0] - d[0]) + params.c2 * (uo[1] - d[1])
              - params.c3 * (uo[2] - d[2])
              + y[0] + params.alpha1 * (y[0] - 2.0 * y[1] + y[2])
              + params.alpha2 * (y[0] - y[1]))
    y.appendleft(y_next)
    return state


def step_first_order(state: PoolSimState, params: FirstOrderPoolParams,
                     u_in_new: float, u_out_new: float, d_new: float) -> PoolSimState:
    """Advance a delayed first-order pool one sample (in place)."""
    lag_in = params.tau + params.tau_bar
    lag_out = params.tau_bar
    _push(state, u_in_new, u_out_new, d_new, lag_in + 1, lag_out + 1)
    y_next = (state.y[0] + params.b * state.u_in[lag_in]
              - params.c * (state.u_out[lag_out] - state.d[lag_out]))
    state.y.appendleft(y_next)
    return state


def step_pool(state: PoolSimState, params: PoolParams, u_in_new, u_out_new, d_new):
    if params.order == 3:
        return step_third_order(state, params, u_in_new, u_out_new, d_new)
    return step_first_order(state, params, u_in_new, u_out_new, d_new)


@dataclass
class Plant:
    """Closed-loop simulator for a whole network.

    ``step(u, d)`` takes the flows ``u_1..u_N`` and off-takes ``d_1..d_N``
    applied at the current sample and returns the levels one sample later.
    """

    network: NetworkModel
    initial_levels: Sequence[float] = None
    states: list = field(init=False)

    def __post_init__(self):
        n = self.network.n
        y0 = np.zeros(n) if self.initial_levels is None else np.asarray(self.initial_levels, float)
        if y0.shape != (n,):
            raise ConfigurationError(f"expected {n} initial levels, got {y0.shape}")
        self.initial_levels = y0
        self.states = [PoolSimState.at_rest(p, lvl) for p, lvl in zip(self.network.pools, y0)]

    @property
    def levels(self) -> np.ndarray:
        return np.array([s.y[0] for s in self.states])

    def step(self, u, d=None) -> np.ndarray:
        n = self.network.n
        u = np.asarray(u, float)
        d = np.zeros(n) if d is None else np.asarray(d, float)
        for i, (p, s) in enumerate(zip(self.network.pools, self.states)):
            step_pool(s, p, u[i], u[i - 1] if i > 0 else 0.0, d[i])
        return self.levels

    def with_levels(self, levels) -> "Plant":
        return Plant(self.network, levels)


def simulate_open_loop(network: NetworkModel, u, d=None, initial_levels=None) -> np.ndarray:
    """Level trajectory (T+1, N) for input sequences of shape (T, N)."""
    u = np.atleast_2d(np.asarray(u, float))
    d = np.zeros_like(u) if d is None else np.atleast_2d(np.asarray(d, float))
    plant = Plant(network, initial_levels)
    ys = [plant.levels]
    for t in range(u.shape[0]):
        ys.append(plant.step(u[t], d[t]))
    return np.array(ys)


__all__ = [
    "ThirdOrderPoolParams", "FirstOrderPoolParams", "NetworkModel", "PoolSimState",
    "Plant", "load_pool_table", "synthesis_pool", "synthesis_network", "build_network",
    "dc_slope", "step_third_order", "step_first_order", "step_pool", "simulate_open_loop",
    "SYNTHESIS_TAU", "SYNTHESIS_TAU_BAR",
]
