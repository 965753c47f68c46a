"""Integer delay fit of the first-order synthesis model.

The reference is the low-pass filtered third-order pool driven by a
fill/empty test signal.  The common filter delay ``tau_bar`` is fitted
first on the outflow response of both pools; the per-pool transport delay
is then fitted on the inflow response with ``tau_bar`` held fixed.
"""
from __future__ import annotations

import csv
import io
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import ConfigurationError
from .filters import IIRFilterCoeffs, design_butterworth, filter_sequence
from .plant import (FirstOrderPoolParams, PoolParams, PoolSimState, step_pool)

DEFAULT_TIMES = (100, 300, 400, 600)
DEFAULT_CANDIDATES = range(0, 31)


def make_test_signal(t1: int, t2: int, t3: int, length: int) -> np.ndarray:
    """+1 before ``t1``, 0 until ``t2``, -1 until ``t3``, then 0."""
    if not 0 < t1 < t2 < t3 <= length:
        raise ConfigurationError("test signal needs 0 < t1 < t2 < t3 <= length")
    u = np.zeros(length)
    u[:t1] = 1.0
    u[t2:t3] = -1.0
    return u


def pool_response(params: PoolParams, inflow=None, outflow=None) -> np.ndarray:
    """Level ``y[1..T]`` of an isolated pool starting at rest."""
    n = len(inflow if inflow is not None else outflow)
    inflow = np.zeros(n) if inflow is None else inflow
    outflow = np.zeros(n) if outflow is None else outflow
    state = PoolSimState.at_rest(params)
    out = np.empty(n)
    for t in range(n):
        step_pool(state, params, inflow[t], outflow[t], 0.0)
        out[t] = state.y[0]
    return out


def fit_delay(references: Sequence[np.ndarray], simulate: Callable[[int], Sequence[np.ndarray]],
              candidates: Iterable[int]):
    """Exhaustive integer search minimizing the energy-normalized squared error.

    ``simulate(k)`` returns one model response per reference.  Returns
    ``(best, errors)`` with ``errors`` mapping candidate to objective; ties
    go to the smaller candidate.
    """
    candidates = sorted(int(k) for k in candidates)
    if not candidates:
        raise ConfigurationError("empty candidate set")
    energy = [float(np.sum(ref ** 2)) or 1.0 for ref in references]
    errors = {}
    for k in candidates:
        errors[k] = sum(float(np.sum((ref - m) ** 2)) / e
                        for ref, m, e in zip(references, simulate(k), energy))
    best = min(candidates, key=lambda k: (errors[k], k))
    return best, errors


def _reference(pool: PoolParams, signal, channel: str, coeffs: Optional[IIRFilterCoeffs]):
    u = signal if coeffs is None else filter_sequence(coeffs, signal)
    if channel == "inflow":
        return pool_response(pool, inflow=u)
    return pool_response(pool, outflow=u)


def fit_common_delay(reference_pools: Sequence[PoolParams], model_pools: Sequence[FirstOrderPoolParams],
                     candidates: Iterable[int] = DEFAULT_CANDIDATES, times=DEFAULT_TIMES,
                     coeffs: Optional[IIRFilterCoeffs] = "default"):
    """Fit the common delay ``tau_bar`` on the outflow responses of all pools."""
    coeffs = design_butterworth() if coeffs == "default" else coeffs
    sig = make_test_signal(*times)
    refs = [_reference(p, sig, "outflow", coeffs) for p in reference_pools]

    def simulate(k):
        return [pool_response(FirstOrderPoolParams(m.b, m.c, 0, k), outflow=sig) for m in model_pools]

    return fit_delay(refs, simulate, candidates)


def fit_pool_delay(reference_pool: PoolParams, model_pool: FirstOrderPoolParams, tau_bar: int,
                   candidates: Iterable[int] = DEFAULT_CANDIDATES, times=DEFAULT_TIMES,
                   coeffs: Optional[IIRFilterCoeffs] = "default"):
    """Fit one pool's transport delay on its inflow response, ``tau_bar`` fixed."""
    coeffs = design_butterworth() if coeffs == "default" else coeffs
    sig = make_test_signal(*times)
    ref = _reference(reference_pool, sig, "inflow", coeffs)

    def simulate(k):
        return [pool_response(FirstOrderPoolParams(model_pool.b, model_pool.c, k, tau_bar), inflow=sig)]

    return fit_delay([ref], simulate, candidates)


def errors_csv(errors: dict, label: str = "objective") -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["candidate", label])
    for k in sorted(errors):
        w.writerow([k, repr(errors[k])])
    return out.getvalue()


def identify(table=None, candidates: Iterable[int] = DEFAULT_CANDIDATES, times=DEFAULT_TIMES,
             coeffs: Optional[IIRFilterCoeffs] = "default") -> dict:
    """Fit ``tau_bar`` and each pool delay for the tabulated pool models.

    Returns a dict with ``tau_bar``, ``tau`` (pool model -> delay) and the
    objective curves under ``errors``.
    """
    from .plant import load_pool_table

    table = load_pool_table() if table is None else table
    models = sorted(k for (k, o) in table if o == 3 and (k, 1) in table)
    if not models:
        raise ConfigurationError("pool table needs matching first- and third-order rows")
    refs = [table[k, 3] for k in models]
    firsts = [table[k, 1] for k in models]
    tau_bar, common = fit_common_delay(refs, firsts, candidates, times, coeffs)
    taus, errs = {}, {"tau_bar": common}
    for k, ref, fo in zip(models, refs, firsts):
        taus[k], errs[k] = fit_pool_delay(ref, fo, tau_bar, candidates, times, coeffs)
    return {"tau_bar": tau_bar, "tau": taus, "errors": errs}
