"""Command-line entry point.

Machine-readable output (CSV, JSON) goes to ``--out`` or standard output;
the human summary goes to standard error. Exit codes: 0 success, 1 a
checked property failed, 2 invalid arguments, 3 dual solver
nonconvergence, 4 oracle fault. Set ``KLM_LOG=DEBUG`` (or INFO, WARNING)
for progress logging.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import tempfile

import numpy as np

from .core import OracleFault
from .dual import DEFAULT_TOL, DualNonconvergence
from .harness import (DEFAULT_FIGURE_GRID, Cell, ExperimentPlan, FigureRow, ReferenceInterval,
                      figure_to_csv, make_problem, reference_optimum, run_cell, run_grid,
                      trace_to_csv)
from .klm import kelley_baseline, klm_run, parse_policy, PureEasy, PureHard
from . import problems as P
from .worstcase import ResistingSpec, lower_bound_experiment

log = logging.getLogger("klmopt")

EXIT_FAIL, EXIT_USAGE, EXIT_SOLVER, EXIT_ORACLE = 1, 2, 3, 4


class UsageError(Exception):
    pass


def _policy(text):
    try:
        parse_policy(text)
    except ValueError as err:
        raise argparse.ArgumentTypeError(str(err))
    return text


def _floats(text):
    try:
        return [float(t) for t in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text):
    try:
        return [int(t) for t in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _problem_args(p, default_problem="abs1d"):
    p.add_argument("--problem", choices=["abs1d", "maxaffine", "linf", "resisting"],
                   default=default_problem, help="benchmark family (default: %(default)s)")
    p.add_argument("--instance", help="JSON instance written by 'gen' (overrides --problem)")
    p.add_argument("--m", type=int, help="rows (linf, default 200) or pieces (maxaffine, default 30)")
    p.add_argument("--n", "--p", dest="n", type=int,
                   help="dimension (linf default 100, maxaffine 10, resisting N)")
    p.add_argument("--seed", type=int, default=0, help="single source of randomness (default 0)")
    p.add_argument("--x0", type=_floats, help="start point, comma separated; one value is broadcast")
    p.add_argument("--L", type=float, help="Lipschitz constant (default: problem-specific)")
    p.add_argument("--R", type=float, help="radius around x0 (default: problem-specific)")
    p.add_argument("--eps", type=float, default=0.0, help="eps-subgradient slack (default 0)")
    p.add_argument("--f-lower", dest="f_lower", type=float, help="known lower bound on f*")


def _solver_args(p):
    p.add_argument("--tol", type=float, default=DEFAULT_TOL,
                   help="certified gap for each subproblem (default %(default)g)")
    p.add_argument("--max-iters", dest="max_iters", type=int,
                   help="subproblem iteration budget (default 200*(M+1))")
    p.add_argument("--no-timing", dest="timing", action="store_false",
                   help="write elapsed_us=0 so traces are byte-reproducible")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="klmopt", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="one run of the method or a baseline")
    _problem_args(r)
    r.add_argument("--N", type=int, required=True, help="number of iterates")
    r.add_argument("--policy", type=_policy, default="pure-hard",
                   help="pure-easy, pure-hard, every-k=K or gap=T (default %(default)s)")
    r.add_argument("--method", choices=["klm", "kelley"], default="klm")
    _solver_args(r)
    r.add_argument("--out", help="directory for trace.csv and summary.json (default: stdout)")

    lb = sub.add_parser("lowerbound", help="run a method on the resisting function")
    lb.add_argument("--N", type=int, required=True)
    lb.add_argument("--p", "--n", dest="p", type=int, help="dimension (default N)")
    lb.add_argument("--L", type=float, default=1.0)
    lb.add_argument("--R", type=float, default=1.0)
    lb.add_argument("--method", choices=["pure-easy", "pure-hard", "kelley"], default="pure-easy")
    lb.add_argument("--tol", type=float, default=DEFAULT_TOL)

    fg = sub.add_parser("figure", help="final-error table over a grid of N")
    _problem_args(fg, default_problem="linf")
    fg.add_argument("--grid", type=_ints, default=list(DEFAULT_FIGURE_GRID),
                    help="comma-separated N values (default 4,8,...,512)")
    fg.add_argument("--policies", default="pure-easy,pure-hard")
    fg.add_argument("--accuracy", type=float, default=1e-6,
                    help="width of the certified reference interval (default %(default)g)")
    fg.add_argument("--jobs", type=int, default=1, help="parallel grid cells")
    _solver_args(fg)
    fg.add_argument("--out", help="directory for figure.csv, cell traces and summary.json")

    g = sub.add_parser("gen", help="write an instance as JSON")
    g.add_argument("--problem", choices=["linf", "maxaffine"], default="linf")
    g.add_argument("--m", type=int)
    g.add_argument("--n", "--p", dest="n", type=int)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", help="output file (default: stdout)")
    return ap


def _description(args, N=None) -> dict:
    desc = {"problem": args.problem, "m": args.m, "n": args.n, "seed": args.seed,
            "x0": args.x0, "L": args.L, "R": args.R, "eps": args.eps,
            "f_lower": args.f_lower, "instance": args.instance}
    if args.x0 is not None and len(args.x0) == 1 and args.problem in ("maxaffine", "linf"):
        dim = args.n or (10 if args.problem == "maxaffine" else 100)
        desc["x0"] = args.x0 * dim
    if N is not None:
        desc["N"] = N
    return desc


def _validate(args):
    if getattr(args, "N", 1) is not None and getattr(args, "N", 1) < 1:
        raise UsageError("--N must be at least 1")
    if getattr(args, "eps", 0.0) < 0:
        raise UsageError("--eps must be non-negative")
    if getattr(args, "tol", 1.0) <= 0:
        raise UsageError("--tol must be positive")
    for flag in ("L", "R"):
        v = getattr(args, flag, None)
        if v is not None and not v > 0:
            raise UsageError(f"--{flag} must be positive")


def _write(out_dir, name, text):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    with open(path, "w", newline="") as fh:
        fh.write(text)
    return path


def cmd_run(args) -> int:
    desc = _description(args, args.N)
    try:
        spec = make_problem(desc)
    except (ValueError, OSError) as err:
        raise UsageError(str(err))
    if args.method == "kelley":
        res = kelley_baseline(spec, tol=args.tol, max_iters=args.max_iters, timing=args.timing)
        gap = res.upper_bound
    else:
        res = klm_run(spec, parse_policy(args.policy), tol=args.tol,
                      max_iters=args.max_iters, timing=args.timing)
        gap = res.upper_bound + spec.eps
    csv_text = trace_to_csv(res.trace)
    summary = {"config": {**vars(args), "resolved": {"L": spec.L, "R": spec.R,
                                                     "x0": spec.x0.tolist()}},
               "f_bar": res.f_bar, "upper_bound": res.upper_bound,
               "certified_gap": gap, "lower_bound": res.lower_bound,
               "rate_bound": spec.rate_bound, "x_bar": res.x_bar.tolist()}
    if args.out:
        _write(args.out, "trace.csv", csv_text)
        _write(args.out, "summary.json", json.dumps(summary, indent=1))
    else:
        sys.stdout.write(csv_text)
    print(f"f_bar={res.f_bar!r} bound={res.upper_bound!r} certified_gap={gap!r}",
          file=sys.stderr)
    return 0


def cmd_lowerbound(args) -> int:
    p = args.N if args.p is None else args.p
    if args.N < 1 or p < args.N:
        raise UsageError(f"need 1 <= N <= p, got N={args.N}, p={p}")
    spec = ResistingSpec(args.L, args.R, args.N, p)
    methods = {"pure-easy": lambda s: klm_run(s, PureEasy(), timing=False),
               "pure-hard": lambda s: klm_run(s, PureHard(), tol=args.tol, timing=False),
               "kelley": lambda s: kelley_baseline(s, tol=args.tol, timing=False)}
    rep = lower_bound_experiment(spec, methods[args.method])
    status = "PASS" if rep.passed else "FAIL"
    print(f"gap={rep.final_gap!r} bound={rep.bound!r} output_gap={rep.output_gap!r} "
          f"span_ok={rep.span_ok} zeros_ok={rep.zeros_ok} {status}")
    return 0 if rep.passed else EXIT_FAIL


def cmd_figure(args) -> int:
    policies = [t.strip() for t in args.policies.split(",") if t.strip()]
    for pol in policies:
        _policy(pol)
    if any(N < 1 for N in args.grid):
        raise UsageError("every N in --grid must be at least 1")
    desc = _description(args)
    try:
        ref = reference_optimum(make_problem({**desc, "N": 1}), args.accuracy, tol=args.tol)
    except (ValueError, OSError) as err:
        raise UsageError(str(err))
    out_dir = args.out or tempfile.mkdtemp(prefix="klmopt-figure-")
    plan = ExperimentPlan(problem=desc, cells=[Cell("klm", pol, N) for N in args.grid
                                               for pol in policies],
                          out_dir=out_dir, tol=args.tol, max_iters=args.max_iters,
                          timing=args.timing, jobs=args.jobs,
                          meta={"reference": {"lo": ref.lo, "hi": ref.hi,
                                              "closed": ref.closed}})
    summary = run_grid(plan)
    rows = []
    for e in summary["cells"]:
        if e["status"] != "ok":
            log.error("cell %s N=%d failed: %s", e["policy"], e["N"], e["error"])
            continue
        rows.append(FigureRow(e["N"], e["policy"], e["f_bar"], e["f_bar"] - ref.hi,
                              e["f_bar"] - ref.lo, e["rate_bound"]))
    text = figure_to_csv(rows)
    if args.out:
        _write(args.out, "figure.csv", text)
    else:
        sys.stdout.write(text)
    for r in rows:
        print(f"N={r.N:4d} {r.policy:10s} error<={r.error_hi:.3e} rate={r.rate_bound:.3e}",
              file=sys.stderr)
    failed = sum(e["status"] != "ok" for e in summary["cells"])
    if failed:
        print(f"{failed} cell(s) failed", file=sys.stderr)
        return EXIT_SOLVER
    return 0


def cmd_gen(args) -> int:
    if args.problem == "linf":
        inst = P.gen_linf(args.m or 200, args.n or 100, args.seed)
    else:
        inst = P.gen_planted_maxaffine(args.m or 30, args.n or 10, args.seed)
    text = P.to_json(inst)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text + "\n")
    return 0


COMMANDS = {"run": cmd_run, "lowerbound": cmd_lowerbound, "figure": cmd_figure, "gen": cmd_gen}


def main(argv=None) -> int:
    level = os.environ.get("KLM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _validate(args)
        return COMMANDS[args.command](args)
    except UsageError as err:
        parser.print_usage(sys.stderr)
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except DualNonconvergence as err:
        print(f"solver did not converge: {err}", file=sys.stderr)
        return EXIT_SOLVER
    except OracleFault as err:
        where = "" if err.point is None else f" at {np.array2string(err.point, threshold=8)}"
        print(f"oracle fault{where}: {err}", file=sys.stderr)
        return EXIT_ORACLE


if __name__ == "__main__":
    sys.exit(main())
