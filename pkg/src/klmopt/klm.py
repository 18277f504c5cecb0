"""The Kelley-like method and the two classic baselines it interpolates.

Each of the ``N - 1`` iterations is either a *hard* step, which solves the
ball-constrained cutting-plane subproblem through its simplex dual, or an
*easy* step, a subgradient step with the step size set by the last hard
step. The output mixes the best early point with the average of the tail.

Examples
--------
>>> from klmopt.problems import abs1d
>>> from klmopt.core import ProblemSpec
>>> spec = ProblemSpec(abs1d(), L=1.0, R=1.0, x0=[1.0], N=4)
>>> res = klm_run(spec, PureEasy())
>>> float(res.x_bar[0])
0.375
"""

from __future__ import annotations

import logging
import math
import re
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import Bundle, Cut, ProblemSpec, RunRecord
from .dual import (DEFAULT_TOL, HardStepSolution, SimplexPoint, build_dual,
                   kelley_step, solve_hard_step)

log = logging.getLogger(__name__)

HARD = "hard"
EASY = "easy"


# ---------------------------------------------------------------------------
# policies


class StepPolicy:
    """Chooses the step type at iteration ``M`` (``1 <= M <= N-1``)."""

    name = "policy"

    def decide(self, M: int, state: "KlmState") -> str:
        raise NotImplementedError

    def __repr__(self):
        return self.name


class PureEasy(StepPolicy):
    name = "pure-easy"

    def decide(self, M, state):
        return EASY


class PureHard(StepPolicy):
    name = "pure-hard"

    def decide(self, M, state):
        return HARD


class EveryK(StepPolicy):
    """Hard step at ``M = 1, 1 + k, 1 + 2k, ...``, easy otherwise."""

    def __init__(self, k: int):
        if int(k) != k or k < 1:
            raise ValueError("k must be a positive integer")
        self.k = int(k)
        self.name = f"every-k={self.k}"

    def decide(self, M, state):
        return HARD if (M - 1) % self.k == 0 else EASY


class GapDriven(StepPolicy):
    """Hard steps until the certified bound drops to ``threshold``, then easy."""

    def __init__(self, threshold: float):
        if not threshold >= 0:
            raise ValueError("threshold must be non-negative")
        self.threshold = float(threshold)
        self.name = f"gap={self.threshold!r}"

    def decide(self, M, state):
        if state.bound_history and state.bound_history[-1][1] <= self.threshold:
            return EASY
        return HARD


def parse_policy(text: str) -> StepPolicy:
    """Parse ``pure-easy``, ``pure-hard``, ``every-k=K`` or ``gap=T``."""
    text = text.strip().lower()
    if text == "pure-easy":
        return PureEasy()
    if text == "pure-hard":
        return PureHard()
    m = re.fullmatch(r"every-(?:k=)?(\d+)", text)
    if m:
        return EveryK(int(m.group(1)))
    m = re.fullmatch(r"gap=(.+)", text)
    if m:
        try:
            return GapDriven(float(m.group(1)))
        except ValueError:
            pass
    raise ValueError(f"unknown policy {text!r}")


# ---------------------------------------------------------------------------
# state and results


@dataclass
class KlmState:
    """Mutable state of one run.

    ``s`` is the iteration of the last hard step (0 if none) and ``m`` the
    0-based index of the best of the first ``s`` iterates.
    """

    spec: ProblemSpec
    bundle: Bundle
    s: int = 0
    tau: float = 1.0
    mu: float = 0.0
    m: int = 0
    weights: Optional[SimplexPoint] = None
    bound_history: list = field(default_factory=list)

    @property
    def iterates(self) -> np.ndarray:
        return self.bundle.points

    @property
    def x_m_at_s(self) -> np.ndarray:
        return self.bundle.cuts[self.m].point


@dataclass
class RunResult:
    x_bar: np.ndarray
    f_bar: float
    upper_bound: float
    trace: list
    iterates: np.ndarray = None
    values: np.ndarray = None
    bound_history: list = field(default_factory=list)
    lower_bound: Optional[float] = None
    method: str = ""

    @property
    def f_best(self) -> float:
        return float(np.min(self.values))


def _init_state(spec: ProblemSpec) -> KlmState:
    return KlmState(spec=spec, bundle=Bundle(spec.dim),
                    mu=spec.R / (spec.L * math.sqrt(spec.N)))


def _sample(state: KlmState, x) -> Cut:
    cut = Cut.from_sample(state.spec.evaluate(x))
    state.bundle.append(cut)
    return cut


# ---------------------------------------------------------------------------
# steps


def hard_step(state: KlmState, spec: ProblemSpec, M: int, tol: float = DEFAULT_TOL,
              max_iters: Optional[int] = None) -> tuple[np.ndarray, HardStepSolution]:
    """Solve the subproblem over the first ``M`` cuts and update the state.

    The reported bound is the dual value, a valid upper bound on the
    subproblem value even when the solve is inexact.
    """
    if not 1 <= M <= spec.N - 1:
        raise ValueError(f"hard step needs 1 <= M <= N-1, got M={M}")
    problem = build_dual(state.bundle, spec, M)
    sol = solve_hard_step(problem, tol, max_iters, warm_start=state.weights)
    state.s = M
    state.tau = float(sol.weights.beta)
    state.mu = sol.zeta_star / spec.L
    state.m = problem.incumbent
    state.weights = sol.weights
    state.bound_history.append((M, sol.dual_value))
    return sol.y_star.copy(), sol


def easy_step(state: KlmState, spec: ProblemSpec, M: int) -> np.ndarray:
    """``x_{M+1} = x_M - mu g_M``."""
    cut = state.bundle.cuts[M - 1]
    return cut.point - state.mu * cut.gradient


def aggregate_output(state: KlmState, N: int) -> np.ndarray:
    """``(1 - tau) x_m + tau/(N - s) * sum_{j > s} x_j``."""
    pts = state.bundle.points
    if pts.shape[0] < N:
        raise ValueError(f"need {N} iterates, have {pts.shape[0]}")
    tail = pts[state.s:N].mean(axis=0)
    if state.s == 0:
        return tail
    if state.tau == 0.0:
        return state.x_m_at_s.copy()
    return (1.0 - state.tau) * state.x_m_at_s + state.tau * tail


def _record(state, i, kind, f_best, t0, timing, **extra) -> RunRecord:
    elapsed = (time.perf_counter_ns() - t0) // 1000 if timing else 0
    return RunRecord(iteration=i, step_type=kind, f_x=state.bundle.cuts[-1].value,
                     f_best=f_best, elapsed_us=int(elapsed), **extra)


def klm_run(spec: ProblemSpec, policy: Optional[StepPolicy] = None,
            tol: float = DEFAULT_TOL, max_iters: Optional[int] = None,
            timing: bool = True) -> RunResult:
    """Run the method for exactly ``N`` iterates.

    Parameters
    ----------
    spec : ProblemSpec
    policy : StepPolicy, optional
        Defaults to :class:`PureHard`.
    tol, max_iters
        Passed to the dual solver of each hard step.
    timing : bool
        Record per-step wall time in the trace (``0`` otherwise).

    Raises
    ------
    DualNonconvergence
        If a hard step cannot be certified; ``err.partial_trace`` holds the
        rows produced so far.
    """
    policy = policy or PureHard()
    state = _init_state(spec)
    trace = []
    t0 = time.perf_counter_ns()
    _sample(state, spec.x0)
    f_best = state.bundle.cuts[0].value
    trace.append(_record(state, 1, "init", f_best, t0, timing))
    N = spec.N
    for M in range(1, N):
        t0 = time.perf_counter_ns()
        kind = policy.decide(M, state)
        bound = None
        if kind == HARD:
            try:
                x_next, sol = hard_step(state, spec, M, tol, max_iters)
            except Exception as err:
                err.partial_trace = trace
                raise
            bound = sol.dual_value
            log.debug("M=%d hard val=%.6g beta=%.4g zeta=%.4g gap=%.2e", M,
                      sol.dual_value, sol.weights.beta, sol.zeta_star, sol.certified_gap)
        elif kind == EASY:
            x_next = easy_step(state, spec, M)
        else:
            raise ValueError(f"policy returned unknown step type {kind!r}")
        cut = _sample(state, x_next)
        f_best = min(f_best, cut.value)
        trace.append(_record(state, M + 1, kind, f_best, t0, timing, bound_upper=bound))

    x_bar = aggregate_output(state, N)
    f_bar = spec.evaluate(x_bar).value
    upper = state.bound_history[-1][1] if state.bound_history else spec.rate_bound
    return RunResult(x_bar=x_bar, f_bar=f_bar, upper_bound=upper, trace=trace,
                     iterates=state.bundle.points, values=state.bundle.values,
                     bound_history=list(state.bound_history), method=policy.name)


def subgradient_baseline(spec: ProblemSpec, timing: bool = True) -> RunResult:
    """Constant-step subgradient method, i.e. the method with only easy steps."""
    return klm_run(spec, PureEasy(), timing=timing)


def kelley_baseline(spec: ProblemSpec, iters: Optional[int] = None,
                    tol: float = DEFAULT_TOL, max_iters: Optional[int] = None,
                    timing: bool = True) -> RunResult:
    """Kelley's cutting-plane method restricted to the ball around ``x0``.

    ``iters`` iterates are produced (default ``spec.N``). The output is the
    best iterate; ``lower_bound`` is the largest model minimum seen, which
    bounds the optimum from below when the ball contains a minimizer.
    """
    iters = spec.N if iters is None else int(iters)
    if iters < 1:
        raise ValueError("iters must be at least 1")
    state = _init_state(spec)
    trace = []
    t0 = time.perf_counter_ns()
    _sample(state, spec.x0)
    f_best = state.bundle.cuts[0].value
    trace.append(_record(state, 1, "init", f_best, t0, timing))
    lower = -math.inf
    warm = None
    for i in range(1, iters):
        t0 = time.perf_counter_ns()
        try:
            step = kelley_step(state.bundle, spec.x0, spec.R, tol, max_iters, warm)
        except Exception as err:
            err.partial_trace = trace
            raise
        warm = step.weights
        # the model only grows, so keep the running maximum
        lower = max(lower, step.model_min)
        cut = _sample(state, step.x_next)
        f_best = min(f_best, cut.value)
        trace.append(_record(state, i + 1, "kelley", f_best, t0, timing,
                             cert_lower=lower, certified_gap=f_best - lower))
    best = state.bundle.incumbent
    x_best = state.bundle.cuts[best].point.copy()
    f_bar = state.bundle.cuts[best].value
    lb = lower if math.isfinite(lower) else None
    upper = f_bar - lower if lb is not None else math.inf
    return RunResult(x_bar=x_best, f_bar=f_bar, upper_bound=upper, trace=trace,
                     iterates=state.bundle.points, values=state.bundle.values,
                     lower_bound=lb, method="kelley")
