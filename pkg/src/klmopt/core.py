"""Problem abstraction shared by every method in the package.

An oracle is any callable ``x -> (f(x), g)`` with ``g`` a subgradient of a
convex function at ``x``. ``ProblemSpec`` bundles an oracle with the data
the methods need up front (Lipschitz constant, radius, start, budget), and
``Bundle`` accumulates the cuts collected along a run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol

import numpy as np

#: relative slack allowed on ``||g|| <= L`` for floating-point headroom
TOL_L = 1e-9


class OracleFault(RuntimeError):
    """A user oracle returned something unusable (non-finite, wrong shape)."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = None if point is None else np.array(point, dtype=float)


class Oracle(Protocol):
    def __call__(self, x: np.ndarray) -> tuple[float, np.ndarray]: ...


@dataclass(frozen=True)
class OracleSample:
    point: np.ndarray
    value: float
    subgradient: np.ndarray


def as_vector(x, dim: Optional[int] = None) -> np.ndarray:
    v = np.atleast_1d(np.asarray(x, dtype=float)).ravel()
    if dim is not None and v.shape[0] != dim:
        raise ValueError(f"expected a vector of length {dim}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector has non-finite entries")
    return v


def evaluate(oracle: Oracle, point, dim: Optional[int] = None) -> OracleSample:
    """Query ``oracle`` at ``point`` and validate the answer.

    Raises
    ------
    OracleFault
        If the value or subgradient is non-finite or has the wrong shape.
    """
    x = as_vector(point, dim)
    value, grad = oracle(x.copy())
    value = float(value)
    grad = np.atleast_1d(np.asarray(grad, dtype=float)).ravel()
    if grad.shape != x.shape:
        raise OracleFault(
            f"subgradient has shape {grad.shape}, expected {x.shape}", x)
    if not math.isfinite(value) or not np.all(np.isfinite(grad)):
        raise OracleFault("oracle returned a non-finite sample", x)
    return OracleSample(point=x, value=value, subgradient=grad)


@dataclass
class ProblemSpec:
    """Everything a method needs to know before the first oracle call.

    Parameters
    ----------
    oracle : callable
        First-order oracle ``x -> (f(x), g)``.
    L : float
        Lipschitz constant of ``f`` (bound on subgradient norms).
    R : float
        Radius such that some minimizer lies in ``||x - x0|| <= R``.
    x0 : array_like
        Ball center and first iterate.
    N : int
        Total number of iterates, fixed in advance.
    eps : float, optional
        Slack when the oracle only returns eps-subgradients.
    f_lower : float, optional
        Known lower bound on the optimal value.
    f_star : float, optional
        Optimal value when known (used only for reporting and tests).
    """

    oracle: Oracle
    L: float
    R: float
    x0: np.ndarray
    N: int
    eps: float = 0.0
    f_lower: Optional[float] = None
    f_star: Optional[float] = None
    name: str = ""

    def __post_init__(self):
        self.x0 = as_vector(self.x0)
        if not (self.L > 0 and math.isfinite(self.L)):
            raise ValueError("L must be a positive finite number")
        if not (self.R > 0 and math.isfinite(self.R)):
            raise ValueError("R must be a positive finite number")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError("N must be a positive integer")
        self.N = int(self.N)
        if not (self.eps >= 0 and math.isfinite(self.eps)):
            raise ValueError("eps must be a non-negative finite number")
        if self.f_lower is not None and not math.isfinite(self.f_lower):
            raise ValueError("f_lower must be finite")

    @property
    def dim(self) -> int:
        return self.x0.shape[0]

    @property
    def rate_bound(self) -> float:
        """The a-priori guarantee ``L R / sqrt(N)``."""
        return self.L * self.R / math.sqrt(self.N)

    def evaluate(self, x) -> OracleSample:
        return evaluate(self.oracle, x, self.dim)


@dataclass(frozen=True)
class Cut:
    point: np.ndarray
    value: float
    gradient: np.ndarray

    @classmethod
    def from_sample(cls, sample: OracleSample) -> "Cut":
        return cls(sample.point, sample.value, sample.subgradient)


@dataclass
class Bundle:
    """Ordered cuts plus the index of the best one seen so far.

    ``incumbent`` is 0-based here; ties keep the earliest cut. The Gram
    matrix of the gradients is grown with each append so the dual solvers
    never rebuild it from scratch.
    """

    dim: int
    cuts: list = field(default_factory=list)
    incumbent: int = -1
    _grads: np.ndarray = field(default=None, repr=False)
    _gram: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        cap = 16
        self._grads = np.empty((cap, self.dim))
        self._gram = np.empty((cap, cap))

    def __len__(self):
        return len(self.cuts)

    def append(self, cut: Cut) -> "Bundle":
        if cut.gradient.shape != (self.dim,) or cut.point.shape != (self.dim,):
            raise ValueError("cut dimension does not match the bundle")
        k = len(self.cuts)
        if k == self._grads.shape[0]:
            cap = 2 * k
            grads = np.empty((cap, self.dim))
            grads[:k] = self._grads[:k]
            gram = np.empty((cap, cap))
            gram[:k, :k] = self._gram[:k, :k]
            self._grads, self._gram = grads, gram
        self._grads[k] = cut.gradient
        row = self._grads[:k + 1] @ cut.gradient
        self._gram[k, :k + 1] = row
        self._gram[:k + 1, k] = row
        self.cuts.append(cut)
        if self.incumbent < 0 or cut.value < self.cuts[self.incumbent].value:
            self.incumbent = k
        return self

    @property
    def gradients(self) -> np.ndarray:
        return self._grads[:len(self.cuts)]

    @property
    def gram(self) -> np.ndarray:
        k = len(self.cuts)
        return self._gram[:k, :k]

    @property
    def points(self) -> np.ndarray:
        return np.array([c.point for c in self.cuts]).reshape(-1, self.dim)

    @property
    def values(self) -> np.ndarray:
        return np.array([c.value for c in self.cuts], dtype=float)

    def best(self, upto: Optional[int] = None) -> int:
        """Index of the lowest value among the first ``upto`` cuts."""
        if upto is None or upto >= len(self.cuts):
            return self.incumbent
        return int(np.argmin(self.values[:upto]))


def bundle_append(bundle: Bundle, cut: Cut) -> Bundle:
    return bundle.append(cut)


def check_subgradient_inequality(oracle: Callable, u, v, eps: float = 0.0,
                                 tol: float = 1e-12) -> bool:
    """``f(u) - f(v) <= <g(u), u - v> + eps`` up to ``tol`` (scaled)."""
    fu, gu = oracle(np.asarray(u, dtype=float))
    fv, _ = oracle(np.asarray(v, dtype=float))
    lhs = fu - fv
    rhs = float(np.dot(gu, np.asarray(u) - np.asarray(v))) + eps
    scale = max(1.0, abs(fu), abs(fv))
    return lhs <= rhs + tol * scale


def check_lipschitz(oracle: Callable, x, L: float, tol: float = 1e-12) -> bool:
    _, g = oracle(np.asarray(x, dtype=float))
    return float(np.linalg.norm(g)) <= L + tol


@dataclass
class RunRecord:
    """One trace row: the iterate ``x_i`` and what is known after computing it.

    ``step_type`` names the step that produced the iterate (``init`` for the
    starting point). ``bound_upper`` is the certified value of a hard-step
    subproblem, ``cert_lower`` a cutting-plane lower bound on the optimum.
    """

    iteration: int
    step_type: str
    f_x: float
    f_best: float
    bound_upper: Optional[float] = None
    cert_lower: Optional[float] = None
    certified_gap: Optional[float] = None
    elapsed_us: int = 0
