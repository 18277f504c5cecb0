"""Experiment orchestration: problem construction, certified reference
intervals, trace CSVs and method/policy grids.

Summary JSON schema (``summary.json`` written by :func:`run_grid`)::

    {
      "schema": 1,
      "config": {...},            # resolved problem description and options
      "reference": {"lo": float, "hi": float, "closed": bool} | null,
      "cells": [
        {"method": str, "policy": str, "N": int, "csv": str,
         "status": "ok" | "failed", "error": str | null,
         "f_bar": float | null, "upper_bound": float | null,
         "lower_bound": float | null, "rate_bound": float}
      ]
    }
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .core import Bundle, Cut, ProblemSpec, RunRecord
from .dual import DEFAULT_TOL, DualNonconvergence, kelley_step
from .klm import PureEasy, kelley_baseline, klm_run, parse_policy
from . import problems as P
from .worstcase import ResistingOracle, ResistingSpec

log = logging.getLogger(__name__)

CSV_HEADER = ("iter", "step_type", "f_x", "f_best", "bound_upper", "cert_lower",
              "certified_gap", "elapsed_us")
SUMMARY_SCHEMA = 1
DEFAULT_FIGURE_GRID = (4, 8, 16, 32, 64, 128, 256, 512)


# ---------------------------------------------------------------------------
# problem construction


def make_problem(desc: dict) -> ProblemSpec:
    """Build a :class:`ProblemSpec` from a plain description.

    Keys: ``problem`` (abs1d, maxaffine, linf, resisting), ``N`` and
    optionally ``m``, ``n``, ``seed``, ``x0``, ``L``, ``R``, ``eps``,
    ``f_lower``, ``instance`` (path to a JSON instance). Missing ``L`` and
    ``R`` get problem defaults: the exact values for the toys and planted
    instances, twice the exact values for the least-infinity-norm problem.
    """
    kind = desc.get("problem", "abs1d")
    N = int(desc["N"])
    seed = int(desc.get("seed", 0) or 0)
    L, R, x0 = desc.get("L"), desc.get("R"), desc.get("x0")
    extra = dict(eps=float(desc.get("eps", 0.0) or 0.0), f_lower=desc.get("f_lower"))
    inst = None
    if desc.get("instance"):
        with open(desc["instance"]) as fh:
            inst = P.from_json(fh.read())
        kind = "linf" if isinstance(inst, P.LinfRegression) else "maxaffine"
    if kind == "abs1d":
        oracle = P.abs1d()
        x0 = [1.0] if x0 is None else x0
        x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        L = 1.0 if L is None else L
        R = max(float(np.abs(x0).max()), 1e-12) if R is None else R
        return ProblemSpec(oracle, L, R, x0, N, f_star=0.0, name="abs1d", **extra)
    if kind == "maxaffine":
        if inst is None:
            k = int(desc.get("m") or 30)
            p = int(desc.get("n") or 10)
            inst = P.gen_planted_maxaffine(k, p, seed)
        x0 = np.zeros(inst.dim) if x0 is None else np.asarray(x0, dtype=float)
        L = inst.L if L is None else L
        if R is None:
            if inst.x_star is None:
                raise ValueError("R is required for an instance without a planted optimum")
            R = max(float(np.linalg.norm(inst.x_star - x0)), 1e-12)
        return ProblemSpec(inst, L, R, x0, N, f_star=inst.f_star, name="maxaffine", **extra)
    if kind == "linf":
        if inst is None:
            inst = P.gen_linf(int(desc.get("m") or 200), int(desc.get("n") or 100), seed)
        x0 = np.zeros(inst.dim) if x0 is None else np.asarray(x0, dtype=float)
        if L is None or R is None:
            L2, R2 = P.linf_doubled_constants(inst, x0)
            L = L2 if L is None else L
            R = R2 if R is None else R
        return ProblemSpec(inst, L, R, x0, N, name="linf", **extra)
    if kind == "resisting":
        p = int(desc.get("n") or N)
        rs = ResistingSpec(float(L or 1.0), float(R or 1.0), N, p)
        return ProblemSpec(ResistingOracle(rs), rs.L, rs.R, np.zeros(p), N,
                           f_star=rs.f_star, name="resisting", **extra)
    raise ValueError(f"unknown problem {kind!r}")


# ---------------------------------------------------------------------------
# reference interval


@dataclass
class ReferenceInterval:
    lo: float
    hi: float
    closed: bool
    cuts: int = 0

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)


def reference_optimum(spec: ProblemSpec, accuracy: float = 1e-6, N: int = 256,
                      max_cuts: int = 2000, tol: Optional[float] = None) -> ReferenceInterval:
    """Certified interval ``[lo, hi]`` containing the optimal value.

    A pure-hard run of length ``N`` collects cuts; Kelley steps on the same
    bundle then raise the model minimum (``lo``) while new cuts lower the
    best value (``hi``), until ``hi - lo <= accuracy`` or ``max_cuts`` cuts
    are used. ``lo`` is valid whenever the ball around ``x0`` contains a
    minimizer. An unclosed interval is returned with ``closed=False``.
    """
    if not accuracy > 0:
        raise ValueError("accuracy must be positive")
    tol = min(DEFAULT_TOL, 0.1 * accuracy) if tol is None else tol
    run = klm_run(ProblemSpec(spec.oracle, spec.L, spec.R, spec.x0, max(N, 1)),
                  tol=tol, timing=False)
    bundle = Bundle(spec.dim)
    for x, v, g in zip(run.iterates, run.values, _grads(spec, run.iterates)):
        bundle.append(Cut(x, float(v), g))
    hi = float(np.min(bundle.values))
    lo = -math.inf
    warm = None
    while len(bundle) < max_cuts:
        step = kelley_step(bundle, spec.x0, spec.R, tol, warm_start=warm)
        warm = step.weights
        lo = max(lo, step.model_min)
        if hi - lo <= accuracy:
            break
        cut = Cut.from_sample(spec.evaluate(step.x_next))
        bundle.append(cut)
        hi = min(hi, cut.value)
    closed = hi - lo <= accuracy
    if not closed:
        log.warning("reference interval width %.3e above %.1e after %d cuts",
                    hi - lo, accuracy, len(bundle))
    return ReferenceInterval(lo, hi, closed, len(bundle))


def _grads(spec, X):
    return [spec.evaluate(x).subgradient for x in X]


# ---------------------------------------------------------------------------
# CSV


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))


def trace_to_csv(trace, fh=None) -> str:
    """Write rows under the fixed header; absent optionals become empty fields."""
    buf = io.StringIO() if fh is None else fh
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in trace:
        w.writerow([str(r.iteration), r.step_type, _fmt(r.f_x), _fmt(r.f_best),
                    _fmt(r.bound_upper), _fmt(r.cert_lower), _fmt(r.certified_gap),
                    str(int(r.elapsed_us))])
    return buf.getvalue() if fh is None else ""


def read_trace_csv(text: str) -> list:
    rows = list(csv.reader(io.StringIO(text)))
    if tuple(rows[0]) != CSV_HEADER:
        raise ValueError(f"unexpected header {rows[0]}")
    opt = lambda s: None if s == "" else float(s)
    return [RunRecord(int(r[0]), r[1], float(r[2]), float(r[3]), opt(r[4]), opt(r[5]),
                      opt(r[6]), int(r[7])) for r in rows[1:]]


# ---------------------------------------------------------------------------
# grids


@dataclass
class Cell:
    method: str  # "klm" or "kelley"
    policy: str
    N: int

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("every cell needs N >= 1")

    @property
    def slug(self) -> str:
        return f"{self.method}_{self.policy.replace('=', '-')}_N{self.N}"


@dataclass
class ExperimentPlan:
    problem: dict
    cells: list
    out_dir: str
    tol: float = DEFAULT_TOL
    max_iters: Optional[int] = None
    timing: bool = True
    jobs: int = 1
    reference_accuracy: Optional[float] = None
    meta: dict = field(default_factory=dict)

    def config(self) -> dict:
        d = asdict(self)
        d["cells"] = [asdict(c) for c in self.cells]
        return d


def run_cell(problem: dict, cell: Cell, tol=DEFAULT_TOL, max_iters=None, timing=True):
    """Run one cell; returns ``(RunResult, ProblemSpec)``."""
    spec = make_problem({**problem, "N": cell.N})
    if cell.method == "kelley":
        res = kelley_baseline(spec, tol=tol, max_iters=max_iters, timing=timing)
    elif cell.method == "klm":
        res = klm_run(spec, parse_policy(cell.policy), tol=tol, max_iters=max_iters,
                      timing=timing)
    else:
        raise ValueError(f"unknown method {cell.method!r}")
    return res, spec


def _run_cell_to_file(args):
    problem, cell, path, tol, max_iters, timing = args
    entry = {"method": cell.method, "policy": cell.policy, "N": cell.N,
             "csv": os.path.basename(path), "status": "ok", "error": None,
             "f_bar": None, "upper_bound": None, "lower_bound": None, "rate_bound": None}
    trace = []
    try:
        res, spec = run_cell(problem, cell, tol, max_iters, timing)
        trace = res.trace
        entry.update(f_bar=res.f_bar, upper_bound=res.upper_bound,
                     lower_bound=res.lower_bound, rate_bound=spec.rate_bound)
    except Exception as err:  # recorded per cell, the grid continues
        entry.update(status="failed", error=f"{type(err).__name__}: {err}")
        trace = getattr(err, "partial_trace", [])
    with open(path, "w", newline="") as fh:
        trace_to_csv(trace, fh)
    return entry


def run_grid(plan: ExperimentPlan) -> dict:
    """Run every cell, writing one CSV per cell and ``summary.json`` last."""
    os.makedirs(plan.out_dir, exist_ok=True)
    jobs = [(plan.problem, c, os.path.join(plan.out_dir, f"cell{i:03d}_{c.slug}.csv"),
             plan.tol, plan.max_iters, plan.timing) for i, c in enumerate(plan.cells)]
    if plan.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=plan.jobs) as ex:
            entries = list(ex.map(_run_cell_to_file, jobs))
    else:
        entries = [_run_cell_to_file(j) for j in jobs]
    reference = None
    if plan.reference_accuracy:
        ref = reference_optimum(make_problem({**plan.problem, "N": 1}),
                                plan.reference_accuracy)
        reference = {"lo": ref.lo, "hi": ref.hi, "closed": ref.closed}
    summary = {"schema": SUMMARY_SCHEMA, "config": plan.config(),
               "reference": reference, "cells": entries}
    with open(os.path.join(plan.out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=1)
    return summary


# ---------------------------------------------------------------------------
# figure data

FIGURE_HEADER = ("N", "policy", "f_bar", "error_lo", "error_hi", "error_mid",
                 "error_halfwidth", "rate_bound")


@dataclass
class FigureRow:
    N: int
    policy: str
    f_bar: float
    error_lo: float
    error_hi: float
    rate_bound: float

    @property
    def error_mid(self) -> float:
        return 0.5 * (self.error_lo + self.error_hi)

    @property
    def error_halfwidth(self) -> float:
        return 0.5 * (self.error_hi - self.error_lo)


def figure_rows(problem: dict, grid=DEFAULT_FIGURE_GRID, policies=("pure-easy", "pure-hard"),
                reference: Optional[ReferenceInterval] = None, accuracy: float = 1e-6,
                tol: float = DEFAULT_TOL, jobs: int = 1) -> tuple[list, ReferenceInterval]:
    """Final absolute-error intervals ``[f_bar - hi, f_bar - lo]`` per (N, policy)."""
    if reference is None:
        reference = reference_optimum(make_problem({**problem, "N": 1}), accuracy)
    cells = [Cell("klm", pol, N) for N in grid for pol in policies]
    args = [(problem, c, tol) for c in cells]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            outs = list(ex.map(_figure_cell, args))
    else:
        outs = [_figure_cell(a) for a in args]
    rows = [FigureRow(c.N, c.policy, f_bar, f_bar - reference.hi, f_bar - reference.lo, rb)
            for c, (f_bar, rb) in zip(cells, outs)]
    return rows, reference


def _figure_cell(args):
    problem, cell, tol = args
    res, spec = run_cell(problem, cell, tol, timing=False)
    return res.f_bar, spec.rate_bound


def figure_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FIGURE_HEADER)
    for r in rows:
        w.writerow([str(r.N), r.policy, _fmt(r.f_bar), _fmt(r.error_lo), _fmt(r.error_hi),
                    _fmt(r.error_mid), _fmt(r.error_halfwidth), _fmt(r.rate_bound)])
    return buf.getvalue()
