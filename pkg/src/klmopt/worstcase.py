"""A function on which no span-respecting method beats ``L R / sqrt(N)``.

``f(x) = L * max(max_{i<=N} x_i, ||x|| - R (1 + 1/sqrt(N)))`` with an oracle
that reveals one new coordinate per call. Started at 0, any method whose
iterates stay in the span of the returned gradients has ``x_i`` supported
on the first ``i - 1`` coordinates, so ``max_{j<=N} x_j >= 0`` for all
``i <= N`` while the optimum is ``-L R / sqrt(N)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import ProblemSpec

ZERO_TOL = 1e-12


@dataclass(frozen=True)
class ResistingSpec:
    L: float = 1.0
    R: float = 1.0
    N: int = 4
    p: int = 4

    def __post_init__(self):
        if not (self.L > 0 and self.R > 0):
            raise ValueError("L and R must be positive")
        if self.N < 1 or self.p < self.N:
            raise ValueError(f"need 1 <= N <= p, got N={self.N}, p={self.p}")

    @property
    def f_star(self) -> float:
        return -self.L * self.R / math.sqrt(self.N)

    @property
    def x_star(self) -> np.ndarray:
        x = np.zeros(self.p)
        x[:self.N] = -self.R / math.sqrt(self.N)
        return x


def resisting_eval(spec: ResistingSpec, x) -> tuple[float, np.ndarray]:
    """Value and gradient; both ties go to the linear pieces, lowest index first."""
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.p,):
        raise ValueError(f"expected a point of dimension {spec.p}")
    lin = x[:spec.N]
    i = int(np.argmax(lin))
    radial = float(np.linalg.norm(x)) - spec.R * (1.0 + 1.0 / math.sqrt(spec.N))
    g = np.zeros(spec.p)
    if lin[i] >= radial:
        g[i] = spec.L
        return spec.L * float(lin[i]), g
    nrm = float(np.linalg.norm(x))
    return spec.L * radial, spec.L * x / nrm


class ResistingOracle:
    """Stateless callable wrapper around :func:`resisting_eval`."""

    def __init__(self, spec: ResistingSpec):
        self.spec = spec

    def __call__(self, x):
        return resisting_eval(self.spec, x)

    def problem(self, N=None) -> ProblemSpec:
        """Problem data with ``x0 = 0``, as the construction assumes."""
        s = self.spec
        return ProblemSpec(self, L=s.L, R=s.R, x0=np.zeros(s.p), N=s.N if N is None else N,
                           f_star=s.f_star, name=f"resisting-N{s.N}")


def span_residual(iterates, gradients) -> float:
    """Largest distance of ``x_i - x_1`` from the span of ``g_1..g_{i-1}``."""
    X = np.atleast_2d(np.asarray(iterates, dtype=float))
    G = np.atleast_2d(np.asarray(gradients, dtype=float))
    worst = 0.0
    for i in range(1, X.shape[0]):
        d = X[i] - X[0]
        basis = G[:i].T
        coef, *_ = np.linalg.lstsq(basis, d, rcond=None)
        worst = max(worst, float(np.linalg.norm(basis @ coef - d)))
    return worst


@dataclass
class LowerBoundReport:
    final_gap: float
    bound: float
    certificate: bool
    span_ok: bool
    zeros_ok: bool
    output_gap: float = math.nan

    @property
    def passed(self) -> bool:
        return self.span_ok and self.certificate


def lower_bound_experiment(spec: ResistingSpec, method: Callable,
                           span_tol: float = 1e-8) -> LowerBoundReport:
    """Run ``method`` on the resisting function and check the lower bound.

    ``method(problem_spec)`` must return a result with ``iterates`` (the
    ``N`` points queried, starting at 0) and ``x_bar``. The gap at ``x_N``
    is compared with ``L R / sqrt(N)``. The span check and the vanishing of
    coordinates ``i..p`` of ``x_i`` are reported, since a violation makes
    the experiment invalid rather than refuting the bound.
    """
    oracle = ResistingOracle(spec)
    result = method(oracle.problem())
    X = np.asarray(result.iterates, dtype=float)
    if X.shape[0] != spec.N:
        raise ValueError(f"method produced {X.shape[0]} iterates, expected {spec.N}")
    grads = np.array([oracle(x)[1] for x in X])
    span_ok = span_residual(X, grads) <= span_tol
    zeros_ok = all(np.all(np.abs(X[i, i:]) <= ZERO_TOL) for i in range(spec.N))
    bound = spec.L * spec.R / math.sqrt(spec.N)
    final_gap = oracle(X[-1])[0] - spec.f_star
    output_gap = oracle(result.x_bar)[0] - spec.f_star
    return LowerBoundReport(final_gap, bound, final_gap >= bound - 1e-12, span_ok,
                            zeros_ok, output_gap)
