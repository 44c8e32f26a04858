"""Command line harness: ``circadmm gen|solve|bench-qp|bench-ring|closed-loop``.

Exit codes: 0 success, 1 bad input, 2 ADMM hit its iteration cap.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from . import bench
from .admm import SOLVERS, SolverConfig, lockstep
from .mpc import ConvergenceError, ring_of_masses, simulate_closed_loop
from .qp import ProblemError, load_cbcqp, random_cbcqp, save_cbcqp

EXIT_OK, EXIT_INPUT, EXIT_MAXITER = 0, 1, 2


def _positive_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {s}")
    return v


def _segments(s):
    """``"3x4"`` means three segments of length 4; ``"4,2"`` lists lengths."""
    try:
        if "x" in s:
            count, length = s.split("x")
            out = [int(length)] * int(count)
        else:
            out = [int(t) for t in s.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad segment list {s!r}") from None
    if not out or min(out) < 1:
        raise argparse.ArgumentTypeError(f"bad segment list {s!r}")
    return out


def _orders(s):
    try:
        out = [int(t) for t in s.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad order list {s!r}") from None
    if not out or min(out) < 1:
        raise argparse.ArgumentTypeError(f"bad order list {s!r}")
    return out


def _add_solver_flags(p):
    p.add_argument("--rho", type=float, default=1.0)
    p.add_argument("--eps", type=float, default=1e-10)
    p.add_argument("--imax", type=_positive_int, default=4000)
    p.add_argument("--warm-start", action="store_true")


def _cfg(args, trace="none"):
    return SolverConfig(rho=args.rho, eps=args.eps, i_max=args.imax,
                        warm_start=args.warm_start, trace_level=trace)


def _add_ring_flags(p):
    p.add_argument("--mass", type=float, default=1.0)
    p.add_argument("--spring", type=float, default=1.0)
    p.add_argument("--damper", type=float, default=0.1)
    p.add_argument("--dt", type=float, default=0.1)
    p.add_argument("--angle-bound", type=float, default=0.5)
    p.add_argument("--torque-bound", type=float, default=1.0)
    p.add_argument("--discretization", choices=("zoh", "euler"), default="zoh")


def _ring_kw(args):
    return dict(mass=args.mass, spring=args.spring, damper=args.damper, dt=args.dt,
                angle_bound=args.angle_bound, torque_bound=args.torque_bound,
                discretization=args.discretization)


def _result_dict(res):
    return {
        "algorithm": res.algorithm,
        "converged": res.converged,
        "iterations": res.iterations,
        "objective": res.objective,
        "z": res.z.tolist(),
        "v": res.v.tolist(),
        "gamma": res.gamma.tolist(),
        "kkt": {k: v for k, v in vars(res.kkt).items()},
        "timings_ms": {k: 1e3 * v for k, v in res.timings.items()},
    }


def _emit(obj, out):
    text = json.dumps(obj, indent=2)
    if out:
        with open(out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def cmd_gen(args):
    v_layout = args.v_segments or args.segments
    p = random_cbcqp(args.seed, args.n, args.segments, v_layout)
    try:
        save_cbcqp(p, args.out)
    except OSError as exc:
        print(f"error: cannot write {args.out}: {exc.strerror}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


def cmd_solve(args):
    try:
        p = load_cbcqp(args.problem)
    except OSError as exc:
        print(f"error: cannot read {args.problem}: {exc.strerror}", file=sys.stderr)
        return EXIT_INPUT
    except ProblemError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    cfg = _cfg(args)
    if args.algorithm == "both":
        a, b, disc = lockstep(p, cfg)
        converged = a.converged and b.converged
        out = {"results": {"baseline": _result_dict(a), "circulant": _result_dict(b)},
               "max_discrepancy": float(disc.max(initial=0.0)),
               "converged": converged}
    else:
        res = SOLVERS[args.algorithm](p, cfg)
        converged = res.converged
        out = _result_dict(res)
    _emit(out, args.out)
    return EXIT_OK if converged else EXIT_MAXITER


def _print_summary(records):
    print(f"{'exp':>5} {'n':>5} {'alg':>10} {'runs':>4} {'iters':>7} "
          f"{'sp1_ms':>10} {'sp2_ms':>10} {'total_ms':>10}")
    for s in bench.summarize(records):
        print(f"{s['experiment']:>5} {s['n']:>5} {s['alg']:>10} {s['runs']:>4} {s['iters']:>7.1f} "
              f"{s['t_sp1_ms']:>10.3f} {s['t_sp2_ms']:>10.3f} {s['t_total_ms']:>10.3f}")


def cmd_bench_qp(args):
    records = bench.bench_qp(args.orders, args.segments, args.repeats, args.seed, _cfg(args))
    bench.write_csv(records, args.out)
    _print_summary(records)
    return EXIT_OK


def cmd_bench_ring(args):
    if min(args.orders) < 3:
        print("error: ring orders must be >= 3", file=sys.stderr)
        return EXIT_INPUT
    records, disc = bench.bench_ring(args.orders, args.horizon, args.repeats, args.seed,
                                     _cfg(args), args.x0_scale, _ring_kw(args))
    bench.write_csv(records, args.out)
    _print_summary(records)
    ok = [r.iters for r in records if r.converged]
    if ok:
        print(f"mean iterations per problem: {np.mean(ok):.2f}")
    if disc:
        print(f"max input discrepancy between algorithms: {max(disc.values()):.3e}")
    return EXIT_OK


def cmd_closed_loop(args):
    mpc = ring_of_masses(args.n, T=args.horizon, **_ring_kw(args))
    rng = np.random.default_rng(args.seed)
    x0 = bench.random_ring_state(rng, args.n, args.x0_scale)
    nx, nu, ny = mpc.n * mpc.n_x, mpc.n * mpc.n_u, mpc.y_lo.size
    header = (["t", "iterations"] + [f"x{i}" for i in range(nx)] + [f"u{i}" for i in range(nu)]
              + [f"active{i}" for i in range(ny)])
    code = EXIT_OK
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        try:
            for rec in simulate_closed_loop(mpc, x0, args.steps, args.algorithm, _cfg(args)):
                w.writerow([rec["t"], rec["iterations"]] + [repr(float(a)) for a in rec["x"]]
                           + [repr(float(a)) for a in rec["u"]]
                           + [int(a) for a in rec["active"]])
        except ConvergenceError as exc:
            print(f"error: {exc}", file=sys.stderr)
            code = EXIT_MAXITER
    return code


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="circadmm", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a random CBCQP as JSON")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=_positive_int, required=True)
    p.add_argument("--segments", type=_segments, default=[10])
    p.add_argument("--v-segments", type=_segments, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("solve", help="solve a CBCQP file")
    p.add_argument("problem")
    p.add_argument("--algorithm", choices=("baseline", "circulant", "both"), default="circulant")
    _add_solver_flags(p)
    p.add_argument("--out", default=None, help="result JSON (default: stdout)")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("bench-qp", help="timing sweep over random CBCQPs")
    p.add_argument("--orders", type=_orders, default=[4, 8, 16, 32, 64, 128])
    p.add_argument("--segments", type=_segments, default=[10])
    p.add_argument("--repeats", type=_positive_int, default=3)
    p.add_argument("--seed", type=int, default=0)
    _add_solver_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench_qp)

    p = sub.add_parser("bench-ring", help="timing sweep over ring-of-masses MPC")
    p.add_argument("--orders", type=_orders, default=[4, 8, 16, 32, 64, 128])
    p.add_argument("--horizon", type=_positive_int, default=10)
    p.add_argument("--repeats", type=_positive_int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--x0-scale", type=float, default=0.3)
    _add_ring_flags(p)
    _add_solver_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench_ring)

    p = sub.add_parser("closed-loop", help="receding-horizon simulation of the ring")
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--horizon", type=_positive_int, default=10)
    p.add_argument("--steps", type=_positive_int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--x0-scale", type=float, default=0.3)
    p.add_argument("--algorithm", choices=("baseline", "circulant"), default="circulant")
    _add_ring_flags(p)
    _add_solver_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_closed_loop)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "closed-loop" and args.n < 3:
        print("error: a ring needs at least 3 masses", file=sys.stderr)
        return EXIT_INPUT
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
