"""Command line entry point (``canal-lq``)."""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .errors import ConfigurationError, ConvergenceError, ProtocolError
from .harness import (CONTROLLERS, Scenario, decay_step, rows_to_csv, run_scenario,
                      sweep_disturbance_location, sweep_network_size, sweep_tradeoff)
from .ident import errors_csv, identify
from .plant import build_network
from .structured import compute_params


def _ints(text):
    return [int(x) for x in text.split(",") if x.strip()]


def _floats(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _emit(text: str, out) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def cmd_params(args) -> None:
    net = build_network(args.n, args.kind, order=1, tau_bar=args.tau_bar)
    q = args.q if len(args.q) > 1 else args.q * args.n
    b = [p.b for p in net.pools]
    c = [p.c for p in net.pools]
    _emit(compute_params(q, args.r, b, c).to_text(), args.out)


def cmd_ident(args) -> None:
    res = identify()
    print(f"tau_bar {res['tau_bar']}")
    for k, tau in res["tau"].items():
        print(f"tau pool_model_{k} {tau}")
    if args.errors_dir:
        d = Path(args.errors_dir)
        d.mkdir(parents=True, exist_ok=True)
        for key, errs in res["errors"].items():
            name = "tau_bar" if key == "tau_bar" else f"tau_pool{key}"
            (d / f"ident_{name}.csv").write_text(errors_csv(errs))


def cmd_simulate(args) -> None:
    sc = Scenario.load(args.scenario)
    if args.controller:
        sc = replace(sc, controller=args.controller)
    if args.flip:
        sc = replace(sc, flip_initial=not sc.flip_initial)
    trace = run_scenario(sc)
    _emit(trace.to_csv(), args.out)
    cost = trace.cost()
    k = decay_step(trace)
    trunc = "not reached" if k is None else str(k)
    print(f"controller {sc.controller}  total {cost.total:.6g}  level {cost.level:.6g}  "
          f"input {cost.input:.6g}  delta_u {cost.delta_u:.6g}  steps {trace.steps}  "
          f"decayed_below_1e-9_at {trunc}", file=sys.stderr)


def cmd_sweep_size(args) -> None:
    rows = sweep_network_size(sizes=_ints(args.sizes), steps=args.steps)
    _emit(rows_to_csv(rows), args.out)


def cmd_sweep_location(args) -> None:
    pools = _ints(args.pools) if args.pools else None
    rows = sweep_disturbance_location(n=args.n, pools=pools, steps=args.steps)
    _emit(rows_to_csv(rows), args.out)


def cmd_tradeoff(args) -> None:
    rows = sweep_tradeoff(n=args.n, pool=args.pool, steps=args.steps,
                          r_structured=_floats(args.r_structured), r_lq3=_floats(args.r_lq3),
                          rho_lq3=_floats(args.rho_lq3))
    _emit(rows_to_csv(rows), args.out)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="canal-lq",
                                 description="Structured LQ control of canal pool networks.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("params", help="run the parameter sweep and print the controller constants")
    p.add_argument("--n", type=int, default=5)
    p.add_argument("--kind", choices=("homogeneous", "alternating"), default="alternating")
    p.add_argument("--q", type=_floats, default=[1.0], help="one value or a comma list")
    p.add_argument("--r", type=float, default=0.3)
    p.add_argument("--tau-bar", type=int, default=10)
    p.add_argument("--out")
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("ident", help="fit the first-order model delays")
    p.add_argument("--errors-dir", help="write fit-error-vs-candidate CSVs here")
    p.set_defaults(func=cmd_ident)

    p = sub.add_parser("simulate", help="run one scenario file")
    p.add_argument("--scenario", required=True)
    p.add_argument("--controller", choices=CONTROLLERS)
    p.add_argument("--flip", action="store_true", help="negate the initial levels")
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep-size", help="cost versus network size")
    p.add_argument("--sizes", default="3,5,10,15")
    p.add_argument("--steps", type=int, default=3000)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep_size)

    p = sub.add_parser("sweep-location", help="cost versus disturbed pool")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--pools", help="comma list, default all")
    p.add_argument("--steps", type=int, default=3000)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep_location)

    p = sub.add_parser("tradeoff", help="level versus input trade-off points")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--pool", type=int, default=5)
    p.add_argument("--steps", type=int, default=3000)
    p.add_argument("--r-structured", default="0.03,0.1,0.3,1,3,10")
    p.add_argument("--r-lq3", default="0.01,0.03,0.1,0.3,1,3")
    p.add_argument("--rho-lq3", default="0.1,1,10,100,1000")
    p.add_argument("--out")
    p.set_defaults(func=cmd_tradeoff)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ConfigurationError, ConvergenceError, ProtocolError, OSError, ValueError) as exc:
        print(f"canal-lq: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
