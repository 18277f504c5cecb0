"""Hard-step subproblem through its simplex dual.

The hard step of KLM maximizes ``f(x_m) - t`` over cuts plus the ellipsoid
``||y - x0||^2 + (N - M) zeta^2 <= R^2``. Its dual is

    min_{(b, beta) in simplex}  sum_i b_i c_i
                                + R sqrt(||sum_i b_i g_i||^2 + L^2 beta^2 / (N - M))

with ``c_i = <g_i, x_i - x0> + delta_m - delta_i (+ eps)``. Both problems are
instances of one template: every simplex vertex ``i`` carries an offset
``c_i`` and a lifted vector ``a_i``, the dual is
``min_w <c, w> + R ||sum_i w_i a_i||`` and the primal is
``max_{||u|| <= R} min_i c_i - <a_i, u>``. The same template covers the
Kelley subproblem, so a single solver lives here.

The solver runs a short pairwise Frank-Wolfe phase with exact line search
and an active-set polish, then, if the gap is still open, a search over
the common level of the pieces using least-distance programming (one NNLS
solve per level) and the linear program for optima where the ball is
inactive. Termination is by the gap between the best dual weights and the
best primal point found.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import linprog, lsq_linear, nnls

from .core import Bundle

#: below this value of d* the radical is treated as zero (0/0 = 0 convention)
DEGENERATE_D = 1e-12

DEFAULT_TOL = 1e-8


class DualNonconvergence(RuntimeError):
    """Certified gap still above tolerance after the iteration budget."""

    def __init__(self, message, weights=None, gap=math.inf):
        super().__init__(message)
        self.weights = weights
        self.gap = gap


class HorizonError(ValueError):
    """Requested a hard step with no iterations left after it."""


# ---------------------------------------------------------------------------
# generic ball/simplex minimax


@dataclass
class _Template:
    c: np.ndarray          # (n,)
    vecs: np.ndarray       # (n, q) lifted vectors a_i
    gram: np.ndarray       # (n, n) = vecs @ vecs.T
    radius: float

    def value(self, w):
        # explicit aggregate: the Gram form loses half the digits near zero
        return float(self.c @ w) + self.radius * float(np.linalg.norm(self.vecs.T @ w))

    def aggregate(self, w):
        return self.vecs.T @ w

    def primal_value(self, u):
        return float(np.min(self.c - self.vecs @ u))

    def recover(self, w):
        """Primal point ``u = -R A w / ||A w||`` (zero when ``A w`` vanishes)."""
        s = self.aggregate(w)
        nrm = float(np.linalg.norm(s))
        if nrm < 2 * DEGENERATE_D * self.radius:
            return np.zeros_like(s), True
        return -self.radius * s / nrm, False


def _segment_argmin(slope, a, b, e, radius, gmax):
    """Minimize ``slope*g + radius*sqrt(a + 2 b g + e g^2)`` over ``[0, gmax]``."""
    if e <= 1e-300:
        return gmax if slope < 0 else 0.0
    z0 = b / e
    k = max(a - b * z0, 0.0)
    if slope == 0.0:
        z = 0.0
    elif radius * radius * e <= slope * slope:
        return gmax if slope < 0 else 0.0
    else:
        z = math.sqrt(slope * slope * k / (e * (radius * radius * e - slope * slope)))
        z = -math.copysign(z, slope)
    return min(max(z - z0, 0.0), gmax)


def _polish(tpl: _Template, support: np.ndarray):
    """Solve the problem restricted to ``support`` through its KKT system.

    Returns ``(w, u)`` candidates (either may be ``None``). The primal point
    maximizes the common value of the support's affine pieces over the ball;
    the weights are the multipliers that balance it.
    """
    idx = np.flatnonzero(support)
    if idx.size == 0:
        return None, None
    A = tpl.vecs[idx]
    c = tpl.c[idx]
    q = A.shape[1]
    R = tpl.radius
    if idx.size > 1:
        D = A[1:] - A[0]
        rhs = c[1:] - c[0]
        U, sv, Vt = np.linalg.svd(D, full_matrices=True)
        tol = max(D.shape) * np.finfo(float).eps * (sv[0] if sv.size else 0.0)
        rank = int(np.sum(sv > max(tol, 1e-13)))
        coef = (U[:, :rank].T @ rhs) / sv[:rank]
        u_p = Vt[:rank].T @ coef
        resid = D @ u_p - rhs
        if np.linalg.norm(resid) > 1e-9 * max(1.0, np.linalg.norm(rhs)):
            return None, None
        B = Vt[rank:].T
    else:
        u_p = np.zeros(q)
        B = np.eye(q)
    slack = R * R - float(u_p @ u_p)
    if slack < -1e-12 * R * R:
        return None, None
    rho = math.sqrt(max(slack, 0.0))
    t = -(B.T @ A[0])
    tn = float(np.linalg.norm(t))
    u = u_p + (B @ (rho * t / tn) if tn > 1e-14 and B.shape[1] else 0.0)

    # multipliers: sum_i w_i a_i + kappa u = 0, sum_i w_i = 1
    interior = float(np.linalg.norm(u)) < R * (1 - 1e-10)
    cols = A.T if interior else np.column_stack([A.T, u])
    sys = np.vstack([cols, np.r_[np.ones(idx.size), np.zeros(cols.shape[1] - idx.size)]])
    rhs = np.zeros(sys.shape[0])
    rhs[-1] = 1.0
    sol, *_ = np.linalg.lstsq(sys, rhs, rcond=None)
    w_s = sol[:idx.size]
    if np.linalg.norm(sys @ sol - rhs) > 1e-9 or np.min(w_s) < -1e-12 or (
            not interior and sol[-1] < -1e-12):
        return None, u
    w = np.zeros(tpl.c.shape[0])
    w[idx] = np.clip(w_s, 0.0, None)
    w /= w.sum()
    return w, u


@dataclass
class _Solution:
    w: np.ndarray
    u: np.ndarray
    dual: float
    primal: float
    iterations: int

    @property
    def gap(self):
        return self.dual - self.primal


def _polish_candidates(tpl: _Template, w):
    """Polished weights for a few guesses of the optimal support.

    Relative thresholds first; if none of them gives a consistent KKT system,
    retry with the ``k`` largest weights, which sheds spurious vertices that
    Frank-Wolfe keeps with small mass.
    """
    found = False
    seen = set()
    for thr in (1e-12, 1e-8, 1e-5):
        supp = w > thr * w.max()
        key = supp.tobytes()
        if key in seen:
            continue
        seen.add(key)
        wc, _ = _polish(tpl, supp)
        if wc is not None:
            found = True
            yield wc
    if found:
        return
    order = np.argsort(-w, kind="stable")
    nnz = int(np.count_nonzero(w > 0))
    kmax = min(nnz, tpl.vecs.shape[1] + 2)
    for k in range(kmax, 0, -1):
        supp = np.zeros(w.shape[0], dtype=bool)
        supp[order[:k]] = True
        if supp.tobytes() in seen:
            continue
        wc, _ = _polish(tpl, supp)
        if wc is not None:
            yield wc
            return


def _recover_any(tpl: _Template, w):
    """Primal point paired with ``w``: the closed form, or the support's KKT
    point when the aggregated vector vanishes."""
    u, degenerate = tpl.recover(w)
    if degenerate:
        best = tpl.primal_value(u)
        for thr in (0.0, 1e-12, 1e-9):
            _, cand = _polish(tpl, w > thr * w.max())
            if cand is not None:
                cv = tpl.primal_value(cand)
                if cv > best:
                    u, best = cand, cv
    return u


def _ldp(tpl: _Template, level, method="nnls"):
    """Least-norm ``u`` with every piece at least ``level``.

    Lawson-Hanson least-distance programming through one nonnegative
    least-squares solve (``method`` is ``"nnls"`` or ``"bvls"``). Returns
    ``(u, lam)`` or ``(None, lam)`` when no such ``u`` exists; ``lam`` are
    the multipliers of the pieces.
    """
    A, c = tpl.vecs, tpl.c
    q = A.shape[1]
    # constraints -a_i . u >= level - c_i
    E = np.vstack([-A.T, (level - c)[None, :]])
    f = np.zeros(q + 1)
    f[q] = 1.0
    if method == "nnls":
        lam, _ = nnls(E, f, maxiter=50 * E.shape[1])
    else:
        lam = np.clip(lsq_linear(E, f, bounds=(0.0, np.inf), method="bvls").x, 0.0, None)
    r = E @ lam - f
    scale = 1.0 + float(np.abs(E).max()) * max(1.0, float(lam.sum()))
    if abs(r[q]) < 1e-12 * scale:
        return None, lam
    u = -r[:q] / r[q]
    # reject points the solve got wrong, near infeasibility this happens
    slack = float(np.min(c - A @ u)) - level
    if slack < -1e-9 * max(1.0, abs(level), float(np.abs(c).max())):
        return None, lam
    return u, lam


class _Tracker:
    """Best dual weights and best primal point seen so far, kept apart.

    Weak duality makes any pairing a valid certificate, so the two sides
    need not come from the same candidate.
    """

    def __init__(self, tpl: _Template):
        self.tpl = tpl
        self.w, self.dual = None, math.inf
        self.u, self.primal = None, -math.inf

    @property
    def gap(self):
        return self.dual - self.primal

    def offer_w(self, w, value=None):
        value = self.tpl.value(w) if value is None else value
        if value < self.dual:
            self.w, self.dual = w.copy(), value
        return value

    def offer_u(self, u):
        R = self.tpl.radius
        nu = float(np.linalg.norm(u))
        if nu > R:
            if nu > R * (1 + 1e-12):
                return -math.inf
            u = u * (R / nu)
        value = self.tpl.primal_value(u)
        if value > self.primal:
            self.u, self.primal = u.copy(), value
        return value

    def offer(self, w):
        """Offer ``w`` and its recovered primal point; returns the dual value."""
        self.offer_u(_recover_any(self.tpl, w))
        return self.offer_w(w)

    def solution(self, iterations) -> _Solution:
        return _Solution(self.w, self.u, self.dual, self.primal, iterations)


def _lp_vertex(tpl: _Template, track: _Tracker):
    """Offer the best weights with a vanishing aggregate, and its primal.

    ``min c.w`` over the simplex subject to ``A^T w = 0`` is the value when
    the ball is inactive at the optimum; the equality marginals are the
    matching primal point ``u`` (with the common level as the last one).
    """
    n, q = tpl.vecs.shape
    A_eq = np.vstack([tpl.vecs.T, np.ones(n)])
    b_eq = np.zeros(q + 1)
    b_eq[q] = 1.0
    res = linprog(tpl.c, A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if res.status != 0:
        return
    w = np.clip(res.x, 0.0, None)
    w /= w.sum()
    track.offer(w)
    y = np.asarray(res.eqlin.marginals, dtype=float)
    track.offer_u(y[:q])
    track.offer_u(-y[:q])


def _solve_by_levels(tpl: _Template, tol, track: _Tracker, max_evals=200):
    """Close the gap by searching over the level ``V`` of the pieces.

    For ``V`` above the optimum, the NNLS multipliers ``w`` of the
    least-distance problem satisfy ``F(w) < V`` (Dinkelbach step), and
    ``F(w)`` never drops below the optimum. A level whose least-norm point
    fits in the ball is a primal value. Polishing on the NNLS support pins
    down optima at a vertex of the pieces, where the ball is inactive.
    Bisection takes over whenever a Dinkelbach step fails to halve the
    bracket.
    """
    R = tpl.radius
    _lp_vertex(tpl, track)
    lo = max(track.primal, float(np.min(tpl.c)))
    up = track.dual
    level = up
    evals = 0
    while evals < max_evals and track.gap > tol:
        if up - lo <= 0.25 * tol:
            break
        evals += 1
        below = False
        for method in ("nnls", "bvls"):
            u, lam = _ldp(tpl, level, method)
            dual = track.dual
            if lam.sum() > 0:
                w = lam / lam.sum()
                dual = min(dual, track.offer(w))
                for wc in _polish_candidates(tpl, w):
                    if wc is not None:
                        dual = min(dual, track.offer(wc))
            if u is not None:
                nu = float(np.linalg.norm(u))
                if nu <= R:
                    track.offer_u(u)
                    below = True
                else:
                    # shrink onto the ball: concavity keeps most of the level
                    track.offer_u(u * (R / nu))
            # an exact solve either reaches the level inside the ball or
            # yields weights certifying the level is out of reach
            if below or dual < level:
                break
        lo = max(lo, track.primal)
        prev = up
        up = min(up, track.dual)
        if track.dual < level and track.dual - lo <= 0.5 * (prev - lo):
            level = track.dual
        elif below or track.dual < level:
            level = 0.5 * (lo + up)
        else:
            # inconclusive level: move toward the certified upper end
            level = 0.5 * (level + up)
    return evals


def _solve_template(tpl: _Template, tol, max_iters, w0=None, fw_iters=30) -> _Solution:
    """Solve after merging identical pieces, which degrade the NNLS solves."""
    keep, where = {}, np.empty(tpl.c.shape[0], dtype=int)
    for i, row in enumerate(np.column_stack([tpl.vecs, tpl.c])):
        where[i] = keep.setdefault(row.tobytes(), len(keep))
    if len(keep) == tpl.c.shape[0]:
        return _solve_unique(tpl, tol, max_iters, w0, fw_iters)
    idx = np.array([where.tolist().index(j) for j in range(len(keep))])
    sub = _Template(tpl.c[idx], tpl.vecs[idx], tpl.gram[np.ix_(idx, idx)], tpl.radius)
    w0s = None if w0 is None else np.bincount(where, weights=np.clip(w0, 0.0, None),
                                              minlength=len(keep))
    if w0s is not None and not w0s.sum() > 0:
        w0s = None
    res = _solve_unique(sub, tol, max_iters, w0s, fw_iters)
    w = np.zeros(tpl.c.shape[0])
    w[idx] = res.w
    return _Solution(w, res.u, res.dual, res.primal, res.iterations)


def _solve_unique(tpl: _Template, tol, max_iters, w0=None, fw_iters=30) -> _Solution:
    """Pairwise Frank-Wolfe with periodic active-set polishing, then levels.

    A short Frank-Wolfe phase settles easy instances and gives a good upper
    bracket. When it does not close the gap (it stalls at kinks of the
    radical and crawls when the optimal support is large) the level search
    finishes the job with at most ``max_iters`` least-distance solves.
    """
    n = tpl.c.shape[0]
    c, K, R = tpl.c, tpl.gram, tpl.radius
    diagK = np.diag(K)
    if w0 is None:
        w = np.zeros(n)
        w[int(np.argmin(c + R * np.sqrt(np.maximum(diagK, 0.0))))] = 1.0
    else:
        w = np.clip(np.asarray(w0, dtype=float), 0.0, None)
        w /= w.sum()

    track = _Tracker(tpl)
    Kw = K @ w
    cw = float(c @ w)
    it = 0
    polish_every = 10
    for it in range(1, min(max_iters, fw_iters) + 1):
        wKw = max(float(w @ Kw), 0.0)
        r = math.sqrt(wKw)
        grad = c + (R / r) * Kw if r > 1e-300 else c.copy()
        F = cw + R * r
        s = int(np.argmin(grad))

        if F - grad[s] <= 0.5 * tol:
            track.offer(w)
            if track.gap <= tol:
                break
        if it % polish_every == 1:
            track.offer(w)
            restart = None
            for wc in _polish_candidates(tpl, w):
                if wc is not None:
                    val = track.offer(wc)
                    if val < F - 1e-15 * max(1.0, abs(F)) and (
                            restart is None or val < restart[0]):
                        restart = (val, wc)
            if track.gap <= tol:
                break
            if restart is not None:
                w = restart[1].copy()
                Kw = K @ w
                cw = float(c @ w)
                continue

        supp = np.flatnonzero(w > 0)
        v = int(supp[np.argmax(grad[supp])])
        moved = False
        if v != s:
            gmax = w[v]
            slope = c[s] - c[v]
            b = Kw[s] - Kw[v]
            e = K[s, s] + K[v, v] - 2 * K[s, v]
            g = _segment_argmin(slope, wKw, b, e, R, gmax)
            if g > 0.0:
                w[s] += g
                w[v] -= g
                if g >= gmax:
                    w[v] = 0.0
                Kw += g * (K[:, s] - K[:, v])
                cw += g * slope
                moved = True
        if not moved:
            # plain FW step toward s
            d = -w.copy()
            d[s] += 1.0
            Kd = K[:, s] - Kw
            g = _segment_argmin(float(c @ d), wKw, float(w @ Kd), float(d @ Kd), R, 1.0)
            if g > 0.0:
                w = w + g * d
                w[w < 1e-300] = 0.0
                Kw = Kw + g * Kd
                cw = cw + g * float(c @ d)
                moved = True
        if not moved:
            # stuck at a kink of the radical: no single-vertex move descends
            break

    track.offer(w)
    if track.gap > tol:
        for wc in _polish_candidates(tpl, w):
            if wc is not None:
                track.offer(wc)
    if track.gap > tol:
        it += _solve_by_levels(tpl, tol, track, max_evals=max_iters)
    return track.solution(it)


# ---------------------------------------------------------------------------
# hard-step dual


@dataclass(frozen=True)
class SimplexPoint:
    """Weights on the cuts, on the ``beta`` term and on the optional ``f_lower`` cut."""

    b: np.ndarray
    beta: float
    b_virtual: Optional[float] = None

    def as_array(self) -> np.ndarray:
        tail = [self.beta] if self.b_virtual is None else [self.beta, self.b_virtual]
        return np.concatenate([np.asarray(self.b, dtype=float), tail])

    @classmethod
    def from_array(cls, w, M, virtual=False) -> "SimplexPoint":
        w = np.asarray(w, dtype=float)
        return cls(w[:M].copy(), float(w[M]), float(w[M + 1]) if virtual else None)


@dataclass
class DualProblem:
    """Data of the simplex dual for a hard step at iteration ``M``.

    ``c`` holds the linear coefficients, ``grads`` the cut gradients and
    ``gram`` their Gram matrix. ``f_lower_coeff`` is ``delta_m - f_lower``
    when a lower bound is known (a virtual cut with zero gradient).
    """

    c: np.ndarray
    grads: np.ndarray
    gram: np.ndarray
    L: float
    R: float
    x0: np.ndarray
    horizon: int
    delta_m: float = 0.0
    incumbent: int = -1
    eps: float = 0.0
    f_lower_coeff: Optional[float] = None

    def __post_init__(self):
        if self.horizon < 1:
            raise HorizonError("a hard step needs at least one remaining iterate")
        if not np.all(np.isfinite(self.c)):
            raise ValueError("dual coefficients must be finite")

    @property
    def M(self) -> int:
        return self.c.shape[0]

    @property
    def has_virtual(self) -> bool:
        return self.f_lower_coeff is not None

    @property
    def size(self) -> int:
        return self.M + 1 + int(self.has_virtual)

    def template(self) -> _Template:
        M, p = self.grads.shape
        n = self.size
        beta_coef = self.L / math.sqrt(self.horizon)
        vecs = np.zeros((n, p + 1))
        vecs[:M, :p] = self.grads
        vecs[M, p] = -beta_coef
        gram = np.zeros((n, n))
        gram[:M, :M] = self.gram
        gram[M, M] = beta_coef ** 2
        c = np.zeros(n)
        c[:M] = self.c
        if self.has_virtual:
            c[M + 1] = self.f_lower_coeff
        return _Template(c, vecs, gram, self.R)


@dataclass
class HardStepSolution:
    weights: SimplexPoint
    y_star: np.ndarray
    zeta_star: float
    t_star: float
    value: float
    dual_value: float
    certified_gap: float
    d_star: float
    degenerate: bool = False
    iterations: int = 0


def build_dual(bundle: Bundle, spec, M: Optional[int] = None) -> DualProblem:
    """Dual data for the hard step over the first ``M`` cuts of ``bundle``.

    ``M = 0`` gives the analytic problem with only the ``beta`` vertex.
    """
    if M is None:
        M = len(bundle)
    if M >= spec.N:
        raise HorizonError(f"hard step at M={M} leaves no iterates (N={spec.N})")
    if M > len(bundle) or M < 0:
        raise ValueError("bundle holds fewer cuts than requested")
    x0 = spec.x0
    p = x0.shape[0]
    if M == 0:
        return DualProblem(np.zeros(0), np.zeros((0, p)), np.zeros((0, 0)),
                           spec.L, spec.R, x0, spec.N, eps=spec.eps)
    m = bundle.best(M)
    grads = bundle.gradients[:M]
    points = bundle.points[:M]
    deltas = bundle.values[:M]
    delta_m = float(deltas[m])
    c = np.einsum("ij,ij->i", grads, points - x0) + delta_m - deltas + spec.eps
    f_lower_coeff = None
    if spec.f_lower is not None:
        f_lower_coeff = delta_m - float(spec.f_lower)
    return DualProblem(c, grads.copy(), bundle.gram[:M, :M].copy(), spec.L, spec.R,
                       x0, spec.N - M, delta_m=delta_m, incumbent=m, eps=spec.eps,
                       f_lower_coeff=f_lower_coeff)


def dual_objective(problem: DualProblem, w) -> float:
    """``sum b_i c_i (+ b_v (delta_m - f_lower)) + R sqrt(||G b||^2 + L^2 beta^2/(N-M))``."""
    if isinstance(w, SimplexPoint):
        w = w.as_array()
    return problem.template().value(np.asarray(w, dtype=float))


def recover_primal(problem: DualProblem, w) -> HardStepSolution:
    """Primal solution ``(y*, zeta*, t*)`` of the hard step from dual weights.

    Away from degeneracy this is ``y* = x0 - sum b_j g_j / (2 d*)`` and
    ``zeta* = L beta / (2 (N-M) d*)``. When ``d*`` vanishes the radical has
    no direction; the maximizer is then rebuilt from the support of ``w``
    (common value of the active pieces), falling back to ``y* = x0``.
    """
    sp_ = w if isinstance(w, SimplexPoint) else SimplexPoint.from_array(
        w, problem.M, problem.has_virtual)
    return _hard_solution(problem, sp_, _recover_any(problem.template(), sp_.as_array()))


def _hard_solution(problem: DualProblem, sp_: SimplexPoint, u) -> HardStepSolution:
    warr = sp_.as_array()
    tpl = problem.template()
    p = problem.x0.shape[0]
    d_star = float(np.linalg.norm(tpl.aggregate(warr))) / (2 * problem.R)
    u = np.array(u, dtype=float)
    # a negative zeta only lowers the L*zeta piece
    u[p] = max(u[p], 0.0)
    y = problem.x0 + u[:p]
    zeta = u[p] / math.sqrt(problem.horizon)
    value = tpl.primal_value(u)
    dual_value = tpl.value(warr)
    return HardStepSolution(
        weights=sp_, y_star=y, zeta_star=float(zeta), t_star=problem.delta_m - value,
        value=value, dual_value=dual_value, certified_gap=dual_value - value,
        d_star=d_star, degenerate=d_star < DEGENERATE_D)


def certify(problem: DualProblem, w) -> tuple[float, float, float]:
    """``(dual_value, primal_value, gap)`` for weights ``w``."""
    sol = recover_primal(problem, w)
    return sol.dual_value, sol.value, sol.certified_gap


def solve_dual(problem: DualProblem, tol: float = DEFAULT_TOL,
               max_iters: Optional[int] = None, warm_start=None) -> SimplexPoint:
    """Weights whose recovered primal point certifies a gap of at most ``tol``.

    Raises
    ------
    DualNonconvergence
        If the gap is still above ``tol`` after ``max_iters`` iterations.
    """
    return solve_hard_step(problem, tol, max_iters, warm_start).weights


def _pad_warm_start(problem: DualProblem, warm_start):
    if warm_start is None:
        return None
    if isinstance(warm_start, SimplexPoint):
        b = np.asarray(warm_start.b, dtype=float)
        beta = warm_start.beta
        bv = warm_start.b_virtual or 0.0
    else:
        arr = np.asarray(warm_start, dtype=float)
        b, beta, bv = arr[:-1], arr[-1], 0.0
    M = problem.M
    w = np.zeros(problem.size)
    k = min(M, b.shape[0])
    w[:k] = b[:k]
    w[M] = beta
    if problem.has_virtual:
        w[M + 1] = bv
    if w.sum() <= 0:
        return None
    return w / w.sum()


def solve_hard_step(problem: DualProblem, tol: float = DEFAULT_TOL,
                    max_iters: Optional[int] = None, warm_start=None) -> HardStepSolution:
    if tol <= 0:
        raise ValueError("tol must be positive")
    if max_iters is None:
        max_iters = 200 * (problem.M + 1)
    tpl = problem.template()
    w0 = _pad_warm_start(problem, warm_start)
    if problem.M == 0 and not problem.has_virtual:
        out = recover_primal(problem, np.ones(1))
    else:
        res = _solve_template(tpl, tol, max_iters, w0)
        sp_ = SimplexPoint.from_array(res.w, problem.M, problem.has_virtual)
        out = _hard_solution(problem, sp_, res.u)
        out.iterations = res.iterations
    iters = out.iterations
    if not out.certified_gap <= tol:
        raise DualNonconvergence(
            f"hard-step dual gap {out.certified_gap:.3e} > tol {tol:.1e} "
            f"after {iters} iterations", out.weights, out.certified_gap)
    return out


# ---------------------------------------------------------------------------
# Kelley subproblem


@dataclass
class KelleyStep:
    x_next: np.ndarray
    model_min: float
    model_at_next: float
    weights: np.ndarray

    @property
    def gap(self):
        return self.model_at_next - self.model_min


def kelley_template(bundle: Bundle, x0, R) -> _Template:
    grads = bundle.gradients
    offsets = bundle.values + np.einsum("ij,ij->i", grads, x0 - bundle.points)
    return _Template(-offsets, grads.copy(), bundle.gram.copy(), float(R))


def kelley_step(bundle: Bundle, x0, R, tol: float = DEFAULT_TOL,
                max_iters: Optional[int] = None, warm_start=None) -> KelleyStep:
    if len(bundle) == 0:
        raise ValueError("Kelley subproblem needs at least one cut")
    if tol <= 0:
        raise ValueError("tol must be positive")
    x0 = np.asarray(x0, dtype=float)
    if max_iters is None:
        max_iters = 200 * (len(bundle) + 1)
    tpl = kelley_template(bundle, x0, R)
    w0 = None
    if warm_start is not None:
        w0 = np.zeros(len(bundle))
        k = min(len(bundle), len(warm_start))
        w0[:k] = warm_start[:k]
        if w0.sum() <= 0:
            w0 = None
    res = _solve_template(tpl, tol, max_iters, w0)
    step = KelleyStep(x0 + res.u, -res.dual, -res.primal, res.w)
    if not step.gap <= tol:
        raise DualNonconvergence(
            f"Kelley subproblem gap {step.gap:.3e} > tol {tol:.1e}", res.w, step.gap)
    return step


def solve_kelley_subproblem(bundle: Bundle, x0, R, tol: float = DEFAULT_TOL,
                            max_iters: Optional[int] = None):
    """Minimize the cutting-plane model over ``||x - x0|| <= R``.

    Returns ``(x_next, model_min)`` where ``model_min`` is a certified lower
    bound on the model minimum (hence on ``f*`` when the ball holds a
    minimizer) and ``x_next`` a model minimizer up to ``tol``.
    """
    step = kelley_step(bundle, x0, R, tol, max_iters)
    return step.x_next, step.model_min
