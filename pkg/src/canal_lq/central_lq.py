"""Centralized LQ control with known-disturbance feed-forward.

Two uses: the full-state controller designed on the third-order network
(the performance ceiling in the comparisons), and a lifted first-order
model that gives an independent dense solution of the problem the
structured controller solves by sweeps.

Throughout, the problem is::

    min  sum_t  x'Qx + u'Ru + 2 x'Nu
    s.t. x[t+1] = A x[t] + B u[t] + v[t]

with ``v`` known in advance and zero after some horizon.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from .errors import ConfigurationError, ConvergenceError
from .plant import FirstOrderPoolParams, NetworkModel, Plant, ThirdOrderPoolParams


@dataclass
class StateSpaceModel:
    """``x[t+1] = A x + B u + E d``, ``y = C x``.

    ``offsets[i]`` is the first state of pool ``i+1``; its level is that
    state.  With ``delta_u`` the last ``n_pools`` states hold ``u[t-1]``.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    E: np.ndarray
    offsets: list
    delta_u: bool = False

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_pools(self) -> int:
        return self.B.shape[1]

    def disturbance(self, d) -> np.ndarray:
        """Map an off-take schedule of shape (T, N) to ``v`` of shape (T, n_states)."""
        return np.atleast_2d(np.asarray(d, float)) @ self.E.T


@dataclass
class QuadraticCost:
    Q: np.ndarray
    R: np.ndarray
    N: Optional[np.ndarray] = None

    def cross(self, n_states, n_inputs):
        return np.zeros((n_states, n_inputs)) if self.N is None else self.N


def _pool_block(p: ThirdOrderPoolParams):
    """Observer-canonical realization of one third-order pool plus an inflow delay line.

    Returns ``(A_i, B_in, B_w)`` where ``B_in`` multiplies the pool inflow and
    ``B_w`` multiplies ``u_{i-1} - d_i``.
    """
    a1 = 1.0 + p.alpha1 + p.alpha2
    a2 = -2.0 * p.alpha1 - p.alpha2
    a3 = p.alpha1
    beta = np.array([-p.c1, p.c2, -p.c3])
    gam = np.array([p.b1, -p.b2, p.b3])
    n = 3 + p.tau
    A = np.zeros((n, n))
    A[:3, 0] = (a1, a2, a3)
    A[0, 1] = A[1, 2] = 1.0
    B_in = np.zeros(n)
    B_w = np.zeros(n)
    B_w[:3] = beta
    if p.tau == 0:
        B_in[:3] = gam
    else:
        A[:3, 3 + p.tau - 1] = gam
        B_in[3] = 1.0
        for j in range(1, p.tau):
            A[3 + j, 3 + j - 1] = 1.0
    return A, B_in, B_w


def assemble_state_space(network: NetworkModel, include_delta_u: bool = False,
                         q=None, r=None, rho=None):
    """Block model of a third-order network and the matching quadratic cost.

    ``q``, ``r`` and ``rho`` default to ones, zeros and zeros.  A scalar
    ``r`` weights only the reservoir release.  With ``include_delta_u`` the
    state carries the previous inputs so ``rho (u[t]-u[t-1])^2`` becomes a
    quadratic form with a state/input cross term.
    """
    if network.order != 3:
        raise ConfigurationError("state-space assembly needs third-order pools")
    n = network.n
    q = np.ones(n) if q is None else np.broadcast_to(np.asarray(q, float), (n,)).copy()
    r = _reservoir_weights(r, n)
    rho = np.zeros(n) if rho is None else np.broadcast_to(np.asarray(rho, float), (n,)).copy()
    if q.shape != (n,) or r.shape != (n,) or rho.shape != (n,):
        raise ConfigurationError("weight vectors must have one entry per pool")
    if np.any(rho != 0) and not include_delta_u:
        raise ConfigurationError("rho > 0 requires include_delta_u=True")

    blocks = [_pool_block(p) for p in network.pools]
    sizes = [blk[0].shape[0] for blk in blocks]
    offsets = list(np.cumsum([0] + sizes[:-1]))
    nx = sum(sizes) + (n if include_delta_u else 0)
    A = np.zeros((nx, nx))
    B = np.zeros((nx, n))
    E = np.zeros((nx, n))
    C = np.zeros((n, nx))
    for i, ((Ai, B_in, B_w), off) in enumerate(zip(blocks, offsets)):
        sl = slice(off, off + Ai.shape[0])
        A[sl, sl] = Ai
        B[sl, i] = B_in
        if i > 0:
            B[sl, i - 1] = B_w
        E[sl, i] = -B_w
        C[i, off] = 1.0
    if include_delta_u:
        base = sum(sizes)
        B[base:, :] = np.eye(n)

    Q = C.T @ np.diag(q) @ C
    R = np.diag(r + rho)
    Ncross = None
    if include_delta_u:
        base = sum(sizes)
        Q[base:, base:] += np.diag(rho)
        Ncross = np.zeros((nx, n))
        Ncross[base:, :] = -np.diag(rho)
    model = StateSpaceModel(A, B, C, E, offsets, include_delta_u)
    return model, QuadraticCost(Q, R, Ncross)


def _reservoir_weights(r, n):
    if r is None:
        return np.zeros(n)
    r = np.asarray(r, float)
    if r.ndim == 0:
        out = np.zeros(n)
        out[-1] = float(r)
        return out
    return r.copy()


def state_from_plant(model: StateSpaceModel, network: NetworkModel, plant: Plant) -> np.ndarray:
    """Reconstruct the block state from the plant's ring buffers."""
    x = np.zeros(model.n_states)
    for i, (p, s, off) in enumerate(zip(network.pools, plant.states, model.offsets)):
        a2 = -2.0 * p.alpha1 - p.alpha2
        a3 = p.alpha1
        tau = p.tau
        w1 = s.u_out[0] - s.d[0]
        w2 = s.u_out[1] - s.d[1]
        e1 = s.u_in[tau]
        e2 = s.u_in[tau + 1]
        x[off] = s.y[0]
        x[off + 1] = a2 * s.y[1] + a3 * s.y[2] + p.c2 * w1 - p.c3 * w2 - p.b2 * e1 + p.b3 * e2
        x[off + 2] = a3 * s.y[1] - p.c3 * w1 + p.b3 * e1
        for j in range(1, tau + 1):
            x[off + 2 + j] = s.u_in[j - 1]
    if model.delta_u:
        base = model.n_states - network.n
        x[base:] = [s.u_in[0] for s in plant.states]
    return x


def dare_residual(A, B, Q, R, S, N=None) -> float:
    """Frobenius norm of the Riccati equation residual at ``S``."""
    N = np.zeros_like(B) if N is None else N
    G = B.T @ S @ B + R
    H = A.T @ S @ B + N
    return float(np.linalg.norm(A.T @ S @ A - H @ np.linalg.solve(G, H.T) + Q - S))


def _riccati_map(A, B, Q, R, N, S):
    G = B.T @ S @ B + R
    H = A.T @ S @ B + N
    S_next = A.T @ S @ A - H @ np.linalg.solve(G, H.T) + Q
    return 0.5 * (S_next + S_next.T)


def solve_dare(A, B, Q, R, N=None, method: str = "auto", tol: float = 1e-12,
               max_iter: int = 10**6, damping: float = 1.0) -> np.ndarray:
    """Stabilizing solution of the discrete algebraic Riccati equation.

    ``method="iteration"`` runs the (optionally damped) Riccati recursion
    from ``S = Q`` until the relative step falls below ``tol``.
    ``method="auto"`` starts from the Schur-based solution in SciPy and
    polishes it with the same recursion; it falls back to pure iteration
    when SciPy fails.  Either way the result must satisfy
    ``residual <= 1e-10 * max(1, ||S||)`` or :class:`ConvergenceError` is raised.
    """
    A, B, Q, R = (np.atleast_2d(np.asarray(M, float)) for M in (A, B, Q, R))
    N = np.zeros_like(B) if N is None else np.asarray(N, float)
    S = None
    if method == "auto":
        try:
            S = scipy.linalg.solve_discrete_are(A, B, Q, R, s=N)
        except (np.linalg.LinAlgError, ValueError):
            S = None
        if S is not None:
            S = 0.5 * (S + S.T)
            for _ in range(50):
                S_next = _riccati_map(A, B, Q, R, N, S)
                step = np.linalg.norm(S_next - S)
                S = S_next
                if step <= tol * max(1.0, np.linalg.norm(S)):
                    break
    elif method != "iteration":
        raise ConfigurationError(f"unknown DARE method {method!r}")
    if S is None:
        S = Q.copy()
        for _ in range(max_iter):
            S_next = (1.0 - damping) * S + damping * _riccati_map(A, B, Q, R, N, S)
            step = np.linalg.norm(S_next - S)
            S = S_next
            if step <= tol * max(1.0, np.linalg.norm(S)):
                break
    res = dare_residual(A, B, Q, R, S, N)
    if not np.isfinite(res) or res > 1e-10 * max(1.0, np.linalg.norm(S)):
        raise ConvergenceError(f"DARE did not converge, residual {res:.3e}", residual=res)
    return S


def lq_gains(A, B, R, S, N=None):
    """Feedback gain ``K`` and feed-forward gain ``K_d`` for value matrix ``S``."""
    N = np.zeros_like(B) if N is None else N
    G = B.T @ S @ B + R
    K = -np.linalg.solve(G, B.T @ S @ A + N.T)
    Kd = -np.linalg.solve(G, B.T)
    return K, Kd


def feedforward_pi(A, B, S, K, v) -> np.ndarray:
    """Backward adjoint recursion ``Pi[t] = (A+BK)' Pi[t+1] + S v[t]``.

    ``v`` has shape (H+1, n) and is taken as zero afterwards; the result
    has shape (H+2, n) with ``Pi[H+1] = 0``.
    """
    v = np.atleast_2d(np.asarray(v, float))
    H1 = v.shape[0]
    AclT = (A + B @ K).T
    Pi = np.zeros((H1 + 1, A.shape[0]))
    for t in range(H1 - 1, -1, -1):
        Pi[t] = AclT @ Pi[t + 1] + S @ v[t]
    return Pi


@dataclass
class LQSolution:
    S: np.ndarray
    K: np.ndarray
    Kd: np.ndarray
    Pi: np.ndarray = field(default=None)

    def control(self, t: int, x) -> np.ndarray:
        u = self.K @ x
        if self.Pi is not None and t < self.Pi.shape[0]:
            u = u + self.Kd @ self.Pi[t]
        return u

    def to_text(self) -> str:
        parts = []
        for name in ("S", "K", "Kd"):
            M = getattr(self, name)
            parts.append(f"# {name} {M.shape[0]} {M.shape[1]}")
            parts.extend(" ".join(f"{x:.17g}" for x in row) for row in M)
        return "\n".join(parts) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "LQSolution":
        mats, name, rows = {}, None, []
        for line in text.splitlines():
            if line.startswith("#"):
                if name:
                    mats[name] = np.array(rows)
                name, rows = line.split()[1], []
            elif line.strip():
                rows.append([float(x) for x in line.split()])
        mats[name] = np.array(rows)
        return cls(mats["S"], mats["K"], mats["Kd"])


def solve_lq(A, B, Q, R, N=None, v=None, **dare_kw) -> LQSolution:
    S = solve_dare(A, B, Q, R, N, **dare_kw)
    K, Kd = lq_gains(A, B, R, S, N)
    sol = LQSolution(S, K, Kd)
    if v is not None:
        sol.Pi = feedforward_pi(A, B, S, K, v)
    return sol


def simulate_feedforward(A, B, sol: LQSolution, x0, v, steps: int):
    """Closed loop under ``u = Kx + K_d Pi``; returns ``(x[0..steps], u[0..steps-1])``."""
    v = np.atleast_2d(np.asarray(v, float))
    x = np.asarray(x0, float).copy()
    xs, us = [x.copy()], []
    for t in range(steps):
        u = sol.control(t, x)
        x = A @ x + B @ u + (v[t] if t < v.shape[0] else 0.0)
        xs.append(x.copy())
        us.append(u)
    return np.array(xs), np.array(us)


def quadratic_cost(Q, R, xs, us, N=None) -> float:
    """``sum_t x'Qx + u'Ru + 2x'Nu`` over the input samples plus a final state term."""
    total = 0.0
    for t, u in enumerate(us):
        x = xs[t]
        total += x @ Q @ x + u @ R @ u
        if N is not None:
            total += 2.0 * x @ N @ u
    return float(total)


MAX_DENSE_VARIABLES = 4000


def dense_qp(A, B, Q, R, x0, v, steps: int, N=None, terminal=None):
    """Minimize the finite-horizon cost over stacked inputs by normal equations.

    The horizon cost is ``sum_{t<steps} stage(x,u) + x[steps]' terminal x[steps]``.
    Returns ``(u, cost)`` with ``u`` of shape (steps, m).
    """
    n, m = B.shape
    if steps * m > MAX_DENSE_VARIABLES:
        raise ConfigurationError(f"dense QP with {steps * m} variables exceeds {MAX_DENSE_VARIABLES}")
    N = np.zeros((n, m)) if N is None else N
    terminal = np.zeros((n, n)) if terminal is None else terminal
    v = np.zeros((steps, n)) if v is None else np.atleast_2d(np.asarray(v, float))
    v = np.vstack([v, np.zeros((max(0, steps - v.shape[0]), n))])[:steps]
    # x[t] = Phi[t] x0 + sum_{s<t} A^{t-1-s} (B u[s] + v[s])
    Phi = [np.eye(n)]
    for _ in range(steps):
        Phi.append(A @ Phi[-1])
    Gam = np.zeros(((steps + 1) * n, steps * m))
    free = np.zeros((steps + 1) * n)
    for t in range(steps + 1):
        free[t * n:(t + 1) * n] = Phi[t] @ x0 + sum((Phi[t - 1 - s] @ v[s] for s in range(t)), np.zeros(n))
        for s in range(t):
            Gam[t * n:(t + 1) * n, s * m:(s + 1) * m] = Phi[t - 1 - s] @ B
    Qbar = scipy.linalg.block_diag(*([Q] * steps + [terminal]))
    Rbar = scipy.linalg.block_diag(*([R] * steps))
    Nbar = np.zeros(((steps + 1) * n, steps * m))
    for t in range(steps):
        Nbar[t * n:(t + 1) * n, t * m:(t + 1) * m] = N
    H = Gam.T @ Qbar @ Gam + Rbar + Gam.T @ Nbar + Nbar.T @ Gam
    f = Gam.T @ Qbar @ free + Nbar.T @ free
    u = -np.linalg.solve(H, f)
    cost = float(u @ H @ u + 2 * f @ u + free @ Qbar @ free)
    return u.reshape(steps, m), cost


def lift_first_order(pools: Sequence[FirstOrderPoolParams], q, r):
    """Delay-lifted state-space model of a first-order network.

    State per pool: the level followed by ``u_i[t-1] .. u_i[t-tau_i-tau_bar]``.
    Returns ``(A, B, E, Q, R, level_index)``; the off-take enters as
    ``v[t] = E d[t - tau_bar]``.
    """
    n = len(pools)
    tau_bars = {p.tau_bar for p in pools}
    if len(tau_bars) != 1:
        raise ConfigurationError("all pools must share tau_bar")
    tb = tau_bars.pop()
    lags = [p.tau + tb for p in pools]
    offs = list(np.cumsum([0] + [1 + L for L in lags[:-1]]))
    nx = sum(1 + L for L in lags)
    A = np.zeros((nx, nx))
    B = np.zeros((nx, n))
    E = np.zeros((nx, n))
    for i, (p, L, off) in enumerate(zip(pools, lags, offs)):
        A[off, off] = 1.0
        if L == 0:
            B[off, i] += p.b
        else:
            A[off, off + L] += p.b
            B[off + 1, i] = 1.0
            for j in range(2, L + 1):
                A[off + j, off + j - 1] = 1.0
        if i > 0:
            if tb == 0:
                B[off, i - 1] -= p.c
            else:
                A[off, offs[i - 1] + tb] -= p.c
        E[off, i] = p.c
    q = np.broadcast_to(np.asarray(q, float), (n,))
    Q = np.zeros((nx, nx))
    Q[offs, offs] = q
    R = np.diag(_reservoir_weights(r, n))
    return A, B, E, Q, R, offs


def lifted_first_order_oracle(pools: Sequence[FirstOrderPoolParams], q, r, y0, d, steps: int,
                              method: str = "riccati") -> np.ndarray:
    """Optimal inputs (steps, N) for the first-order network by dense LQ.

    ``d`` is an off-take schedule of shape (T, N) starting at ``t = 0``
    (earlier off-takes are zero).  ``method="riccati"`` uses the stationary
    Riccati solution with the adjoint feed-forward; ``method="qp"`` solves the
    stacked problem with the Riccati terminal cost, which needs ``R`` positive
    definite on the horizon and a small horizon.
    """
    A, B, E, Q, R, offs = lift_first_order(pools, q, r)
    tb = pools[0].tau_bar
    d = np.zeros((0, len(pools))) if d is None else np.atleast_2d(np.asarray(d, float))
    # off-takes reach the levels tau_bar samples later
    v = np.vstack([np.zeros((tb, len(pools))), d]) @ E.T if d.size else np.zeros((1, A.shape[0]))
    x0 = np.zeros(A.shape[0])
    x0[offs] = y0
    sol = solve_lq(A, B, Q, R, v=v)
    if method == "riccati":
        _, us = simulate_feedforward(A, B, sol, x0, v, steps)
        return us
    if method == "qp":
        horizon = max(steps, v.shape[0])
        u, _ = dense_qp(A, B, Q, R, x0, v, horizon, terminal=sol.S)
        return u[:steps]
    raise ConfigurationError(f"unknown oracle method {method!r}")


class ThirdOrderLQController:
    """Full-state LQ with feed-forward designed on the third-order network."""

    def __init__(self, network: NetworkModel, q=None, r=None, rho=None):
        include = rho is not None and np.any(np.asarray(rho, float) != 0)
        self.network = network
        self.model, self.cost = assemble_state_space(network, include, q, r, rho if include else None)
        m, c = self.model, self.cost
        self.solution = solve_lq(m.A, m.B, c.Q, c.R, c.N)

    def plan(self, d_applied) -> None:
        """Feed-forward for the (already filtered) off-takes, shape (T, N)."""
        m, sol = self.model, self.solution
        sol.Pi = feedforward_pi(m.A, m.B, sol.S, sol.K, m.disturbance(d_applied))

    def control(self, t: int, plant: Plant) -> np.ndarray:
        x = state_from_plant(self.model, self.network, plant)
        return self.solution.control(t, x)
