"""Benchmark instances and their oracles.

Built-in oracles pick the lowest-index active piece at kinks, so repeated
calls are bit-identical. Random instances use numpy's ``PCG64`` generator
(``numpy.random.Generator(PCG64(seed))``) and map ``u ~ U[0, 1)`` to
``2u - 1`` for uniform entries on ``[-1, 1)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import nnls

SCHEMA_VERSION = 1


def _rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def _uniform_pm1(rng, shape) -> np.ndarray:
    return 2.0 * rng.random(shape) - 1.0


# ---------------------------------------------------------------------------
# 1-D toys


def abs1d(scale: float = 1.0, shift: float = 0.0):
    """Oracle for ``scale * |x - shift|``; the subgradient at the kink is 0."""

    def oracle(x):
        z = float(x[0]) - shift
        g = 0.0 if z == 0 else math.copysign(scale, z)
        return scale * abs(z), np.array([g])

    oracle.L = abs(scale)
    oracle.f_star = 0.0
    oracle.x_star = np.array([shift], dtype=float)
    return oracle


def max_oracle(x):
    """``max_i x_i`` with gradient ``e_i`` for the first maximizing index."""
    x = np.asarray(x, dtype=float)
    i = int(np.argmax(x))
    g = np.zeros_like(x)
    g[i] = 1.0
    return float(x[i]), g


# ---------------------------------------------------------------------------
# max of affine functions


@dataclass
class MaxAffine:
    """``f(x) = max_i <s_i, x> + o_i``, optionally with a planted minimizer.

    ``witness`` holds convex weights on the active slopes whose combination
    vanishes, certifying that ``x_star`` is optimal.
    """

    slopes: np.ndarray
    offsets: np.ndarray
    x_star: Optional[np.ndarray] = None
    f_star: Optional[float] = None
    witness: Optional[np.ndarray] = None
    seed: Optional[int] = None

    def __post_init__(self):
        self.slopes = np.atleast_2d(np.asarray(self.slopes, dtype=float))
        self.offsets = np.asarray(self.offsets, dtype=float).ravel()
        if self.slopes.shape[0] != self.offsets.shape[0]:
            raise ValueError("slopes and offsets disagree on the number of pieces")

    @property
    def dim(self) -> int:
        return self.slopes.shape[1]

    @property
    def L(self) -> float:
        return float(np.max(np.linalg.norm(self.slopes, axis=1)))

    def __call__(self, x):
        vals = self.slopes @ np.asarray(x, dtype=float) + self.offsets
        i = int(np.argmax(vals))
        return float(vals[i]), self.slopes[i].copy()


def plant_witness(active_slopes) -> Optional[np.ndarray]:
    """Convex weights ``w`` with ``sum w_i s_i = 0``, or ``None``.

    Solved as a nonnegative least-squares problem with the row ``sum w = 1``
    appended, which is exact when 0 lies in the hull of the slopes.
    """
    S = np.atleast_2d(np.asarray(active_slopes, dtype=float))
    A = np.vstack([S.T, np.ones(S.shape[0])])
    rhs = np.zeros(A.shape[0])
    rhs[-1] = 1.0
    w, res = nnls(A, rhs)
    if res > 1e-10 or w.sum() <= 0:
        return None
    w = w / w.sum()
    if np.linalg.norm(S.T @ w) > 1e-10:
        return None
    return w


def gen_planted_maxaffine(k: int, p: int, seed: int = 0, n_active: Optional[int] = None,
                          max_tries: int = 100) -> MaxAffine:
    """Random max-affine function with a known minimizer.

    ``n_active`` slopes (default ``p + 1``, capped at ``k``) are drawn so the
    origin lies in their hull, then all pieces get offsets making exactly
    those pieces tight at a random ``x_star``. If a draw fails to give a
    witness, the next seed is tried.

    Raises
    ------
    RuntimeError
        If ``max_tries`` consecutive seeds fail.
    """
    if k < 2 or p < 1:
        raise ValueError("need k >= 2 and p >= 1")
    n_active = min(k, p + 1) if n_active is None else int(n_active)
    if not 2 <= n_active <= k:
        raise ValueError("n_active must lie in [2, k]")
    for attempt in range(max_tries):
        rng = _rng(seed + attempt)
        slopes = rng.standard_normal((k, p))
        # recentre the active slopes on a random convex combination
        lam = rng.dirichlet(np.ones(n_active))
        slopes[:n_active] -= lam @ slopes[:n_active]
        w = plant_witness(slopes[:n_active])
        if w is None:
            continue
        x_star = _uniform_pm1(rng, p)
        f_star = float(rng.standard_normal())
        offsets = f_star - slopes @ x_star
        # inactive pieces sit strictly below at x_star
        offsets[n_active:] -= rng.uniform(0.1, 1.0, k - n_active)
        return MaxAffine(slopes, offsets, x_star, f_star, w, seed + attempt)
    raise RuntimeError(f"planting failed for seeds {seed}..{seed + max_tries - 1}")


def plant_from_slopes(slopes, x_star, f_star: float = 0.0, gaps=None) -> MaxAffine:
    """Plant ``x_star`` for given slopes; all pieces active unless ``gaps`` given."""
    slopes = np.atleast_2d(np.asarray(slopes, dtype=float))
    x_star = np.asarray(x_star, dtype=float).ravel()
    offsets = f_star - slopes @ x_star
    if gaps is not None:
        offsets = offsets - np.asarray(gaps, dtype=float)
    active = np.flatnonzero(np.isclose(slopes @ x_star + offsets, f_star, atol=1e-12))
    w = plant_witness(slopes[active])
    if w is None:
        raise ValueError("0 is not in the hull of the active slopes")
    full = np.zeros(slopes.shape[0])
    full[active] = w
    return MaxAffine(slopes, offsets, x_star, float(f_star), full)


# ---------------------------------------------------------------------------
# ||Ax - b||_inf


@dataclass
class LinfRegression:
    A: np.ndarray
    b: np.ndarray
    seed: Optional[int] = None

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.b = np.asarray(self.b, dtype=float).ravel()
        if self.A.shape[0] != self.b.shape[0]:
            raise ValueError("A and b disagree on the number of rows")
        if not (np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.b))):
            raise ValueError("instance has non-finite entries")

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    @property
    def L(self) -> float:
        """Largest row norm, a bound on every returned subgradient."""
        return float(np.max(np.linalg.norm(self.A, axis=1)))

    def __call__(self, x):
        return linf_oracle(self, x)


def gen_linf(m: int, p: int, seed: int = 0) -> LinfRegression:
    """Uniform ``[-1, 1)`` entries for ``A`` (row-major draw) and then ``b``."""
    if m < 1 or p < 1:
        raise ValueError("m and p must be positive")
    rng = _rng(seed)
    A = _uniform_pm1(rng, (m, p))
    b = _uniform_pm1(rng, m)
    return LinfRegression(A, b, seed)


def linf_oracle(inst: LinfRegression, x):
    r = inst.A @ np.asarray(x, dtype=float) - inst.b
    j = int(np.argmax(np.abs(r)))
    sign = -1.0 if r[j] < 0 else 1.0
    return float(abs(r[j])), sign * inst.A[j]


def linf_minimize(inst: LinfRegression):
    """Exact minimizer of ``||Ax - b||_inf`` via its linear program.

    Used only to measure the distance ``||x_hat - x0||`` that fixes ``R``;
    the optimality interval itself comes from the harness.
    """
    from scipy.optimize import linprog

    m, p = inst.A.shape
    c = np.zeros(p + 1)
    c[-1] = 1.0
    ones = np.ones((m, 1))
    A_ub = np.block([[inst.A, -ones], [-inst.A, -ones]])
    b_ub = np.concatenate([inst.b, -inst.b])
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=[(None, None)] * (p + 1),
                  method="highs")
    if res.status != 0:
        raise RuntimeError(f"reference LP failed: {res.message}")
    return res.x[:p], float(res.x[-1])


def linf_doubled_constants(inst: LinfRegression, x0=None) -> tuple[float, float]:
    """``(2 L, 2 ||x_hat - x0||)``, the loose constants of the experiment."""
    x0 = np.zeros(inst.dim) if x0 is None else np.asarray(x0, dtype=float)
    x_hat, _ = linf_minimize(inst)
    return 2.0 * inst.L, 2.0 * float(np.linalg.norm(x_hat - x0))


# ---------------------------------------------------------------------------
# serialization


def to_json(inst) -> str:
    """Serialize an instance; matrices are stored row-major as nested lists."""
    if isinstance(inst, LinfRegression):
        doc = {"kind": "linf", "m": inst.A.shape[0], "p": inst.A.shape[1],
               "seed": inst.seed, "A": inst.A.tolist(), "b": inst.b.tolist()}
    elif isinstance(inst, MaxAffine):
        doc = {"kind": "maxaffine", "k": inst.slopes.shape[0], "p": inst.dim,
               "seed": inst.seed, "slopes": inst.slopes.tolist(),
               "offsets": inst.offsets.tolist(),
               "x_star": None if inst.x_star is None else inst.x_star.tolist(),
               "f_star": inst.f_star,
               "witness": None if inst.witness is None else inst.witness.tolist()}
    else:
        raise TypeError(f"cannot serialize {type(inst).__name__}")
    doc["schema"] = SCHEMA_VERSION
    return json.dumps(doc, indent=1)


def from_json(text: str):
    doc = json.loads(text)
    kind = doc.get("kind")
    if kind == "linf":
        return LinfRegression(np.array(doc["A"], dtype=float),
                              np.array(doc["b"], dtype=float), doc.get("seed"))
    if kind == "maxaffine":
        opt = lambda key: None if doc.get(key) is None else np.array(doc[key], dtype=float)
        return MaxAffine(np.array(doc["slopes"], dtype=float),
                         np.array(doc["offsets"], dtype=float), opt("x_star"),
                         doc.get("f_star"), opt("witness"), doc.get("seed"))
    raise ValueError(f"unknown instance kind {kind!r}")
