import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from klmopt.core import Bundle, Cut, ProblemSpec
from klmopt.dual import DualNonconvergence
from klmopt.klm import (EASY, HARD, EveryK, GapDriven, KlmState, PureEasy, PureHard,
                        aggregate_output, easy_step, hard_step, kelley_baseline, klm_run,
                        parse_policy, subgradient_baseline)
from klmopt.problems import abs1d, gen_planted_maxaffine
from klmopt.worstcase import span_residual

S2 = 1 / math.sqrt(2)


def planted_spec(seed, N, p=4, k=12, R_scale=1.0, **kw):
    inst = gen_planted_maxaffine(k, p, seed)
    x0 = np.zeros(p)
    R = R_scale * float(np.linalg.norm(inst.x_star - x0))
    return ProblemSpec(inst, L=inst.L, R=R, x0=x0, N=N, f_star=inst.f_star, **kw), inst


def state_with(points, values, grads, N=4, **kw):
    p = np.atleast_2d(points).shape[1]
    spec = ProblemSpec(lambda x: (0.0, np.zeros(p)), L=1.0, R=1.0, x0=np.zeros(p), N=N)
    b = Bundle(p)
    for x, v, g in zip(np.atleast_2d(points), values, np.atleast_2d(grads)):
        b.append(Cut(np.asarray(x, float), float(v), np.asarray(g, float)))
    return KlmState(spec=spec, bundle=b, **kw), spec


# ---------------------------------------------------------------------------
# examples


def test_abs_pure_easy_hand_simulation():
    spec = ProblemSpec(abs1d(), L=1.0, R=1.0, x0=[1.0], N=4)
    res = klm_run(spec, PureEasy())
    assert res.iterates.ravel().tolist() == [1.0, 0.5, 0.0, 0.0]
    assert res.x_bar.tolist() == [0.375]
    assert res.f_bar == 0.375 and res.upper_bound == 0.5


def test_n_equals_one():
    spec = ProblemSpec(abs1d(), L=2.0, R=3.0, x0=[1.0], N=1)
    for pol in (PureEasy(), PureHard()):
        res = klm_run(spec, pol)
        assert res.x_bar.tolist() == [1.0] and res.upper_bound == 6.0
        assert len(res.trace) == 1 and res.trace[0].step_type == "init"


def test_hard_step_one_cut():
    state, spec = state_with([[0.0, 0.0]], [0.0], [[0.6, 0.8]], N=2,
                             mu=1 / math.sqrt(2))
    x_next, sol = hard_step(state, spec, 1)
    assert np.allclose(x_next, -S2 * np.array([0.6, 0.8]), atol=1e-9)
    assert sol.dual_value == pytest.approx(S2, abs=1e-9)
    assert state.tau == pytest.approx(0.5, abs=1e-9)
    assert state.mu == pytest.approx(S2, abs=1e-9)
    assert state.s == 1 and state.bound_history[0][0] == 1


def test_hard_step_zero_gradient():
    # a flat cut gives nothing to move along, so y* stays at the centre x0 = 0
    state, spec = state_with([[0.5]], [2.0], [[0.0]], N=3)
    x_next, sol = hard_step(state, spec, 1)
    assert x_next.tolist() == [0.0]
    assert sol.dual_value == pytest.approx(0.0, abs=1e-12)


def test_hard_step_range():
    state, spec = state_with([[0.0]], [0.0], [[1.0]], N=2)
    with pytest.raises(ValueError):
        hard_step(state, spec, 2)


@pytest.mark.parametrize("x,mu,g,expected", [
    ([2.0], 0.5, [1.0], [1.5]),
    ([2.0], 0.0, [1.0], [2.0]),
    ([1.0, 1.0], 1.0, [0.0, 1.0], [1.0, 0.0]),
])
def test_easy_step_examples(x, mu, g, expected):
    state, spec = state_with([x], [0.0], [g], mu=mu)
    assert easy_step(state, spec, 1).tolist() == expected


def test_aggregate_plain_average():
    state, _ = state_with([[0.0], [1.0]], [0, 0], [[0.0], [0.0]])
    assert aggregate_output(state, 2).tolist() == [0.5]


def test_aggregate_mixed():
    state, _ = state_with([[0.0], [2.0], [4.0]], [0, 0, 0], [[0.0]] * 3, s=1, tau=0.5, m=0)
    assert aggregate_output(state, 3).tolist() == [1.5]


def test_aggregate_tau_zero_is_incumbent():
    pts = [[0.3], [2.0], [4.0]]
    state, _ = state_with(pts, [1, 0, 2], [[0.0]] * 3, s=2, tau=0.0, m=1)
    assert aggregate_output(state, 3).tolist() == [2.0]


def test_kelley_abs_first_step():
    spec = ProblemSpec(abs1d(), L=1.0, R=2.0, x0=[1.0], N=2)
    res = kelley_baseline(spec)
    assert res.iterates[1] == pytest.approx([-1.0], abs=1e-12)
    assert res.trace[1].cert_lower == pytest.approx(-1.0, abs=1e-12)
    assert res.trace[1].step_type == "kelley"


def test_subgradient_baseline_is_pure_easy():
    spec, _ = planted_spec(1, 20)
    a = subgradient_baseline(spec, timing=False)
    b = klm_run(spec, PureEasy(), timing=False)
    assert np.array_equal(a.iterates, b.iterates) and a.f_bar == b.f_bar


# ---------------------------------------------------------------------------
# policies


def test_parse_policy():
    assert isinstance(parse_policy("pure-easy"), PureEasy)
    assert isinstance(parse_policy("Pure-Hard"), PureHard)
    assert parse_policy("every-k=3").k == 3 and parse_policy("every-5").k == 5
    assert parse_policy("gap=0.01").threshold == 0.01
    for bad in ("sometimes", "every-k=0", "gap=-1", "gap=x"):
        with pytest.raises(ValueError):
            parse_policy(bad)


def test_every_k_schedule():
    spec, _ = planted_spec(2, 12)
    res = klm_run(spec, EveryK(4), timing=False)
    kinds = [r.step_type for r in res.trace[1:]]
    assert [i + 1 for i, k in enumerate(kinds) if k == HARD] == [1, 5, 9]
    assert len(res.trace) == 12


def test_gap_driven_switches_to_easy():
    spec, _ = planted_spec(3, 30)
    res = klm_run(spec, GapDriven(1e9), timing=False)
    kinds = [r.step_type for r in res.trace[1:]]
    assert kinds[0] == HARD and set(kinds[1:]) == {EASY}
    res = klm_run(spec, GapDriven(0.0), timing=False)
    assert set(r.step_type for r in res.trace[1:]) == {HARD}


def test_bad_policy_output():
    class Weird(PureEasy):
        def decide(self, M, state):
            return "medium"

    spec, _ = planted_spec(0, 3)
    with pytest.raises(ValueError):
        klm_run(spec, Weird())


def test_partial_trace_on_nonconvergence(monkeypatch):
    import klmopt.klm as klm

    def boom(*a, **k):
        raise DualNonconvergence("forced", None, 1.0)

    monkeypatch.setattr(klm, "solve_hard_step", boom)
    spec, _ = planted_spec(0, 5)
    with pytest.raises(DualNonconvergence) as info:
        klm_run(spec, EveryK(2), timing=False)
    # M=1 is hard, so only the initial row exists
    assert [r.step_type for r in info.value.partial_trace] == ["init"]


# ---------------------------------------------------------------------------
# properties


@given(st.integers(0, 500), st.integers(2, 25), st.sampled_from(["pure-easy", "pure-hard",
                                                                 "every-k=3"]))
def test_span_property(seed, N, policy):
    spec, _ = planted_spec(seed, N, p=6, k=10)
    res = klm_run(spec, parse_policy(policy), timing=False)
    grads = np.array([spec.evaluate(x).subgradient for x in res.iterates])
    assert span_residual(res.iterates, grads) <= 1e-8


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("policy", ["pure-hard", "every-k=2", "every-k=5"])
def test_bound_chain(seed, policy):
    tol = 1e-9
    spec, inst = planted_spec(seed, 40, p=5, k=15, R_scale=1.5)
    res = klm_run(spec, parse_policy(policy), tol=tol, timing=False)
    vals = [v for _, v in res.bound_history]
    assert vals[0] <= spec.rate_bound + tol
    assert all(b <= a + 2 * tol for a, b in zip(vals, vals[1:]))
    assert res.f_bar - inst.f_star <= vals[-1] + 2 * tol


@given(st.integers(0, 500), st.integers(1, 40))
def test_pure_easy_closed_form(seed, N):
    spec, inst = planted_spec(seed, N, p=3, k=8)
    res = klm_run(spec, PureEasy(), timing=False)
    step = spec.R / (spec.L * math.sqrt(N))
    X = res.iterates
    for i in range(1, N):
        g = spec.evaluate(X[i - 1]).subgradient
        assert np.array_equal(X[i], X[i - 1] - step * g)
    assert res.f_bar - inst.f_star <= spec.rate_bound + 1e-12


@pytest.mark.parametrize("seed", range(4))
def test_eps_variant(seed):
    eps = 0.05
    base, inst = planted_spec(seed, 25, p=4, k=10)

    def eps_oracle(x):
        # return the gradient of the last piece within eps of the max
        vals = inst.slopes @ x + inst.offsets
        i = int(np.flatnonzero(vals >= vals.max() - eps)[-1])
        return float(vals.max()), inst.slopes[i].copy()

    spec = ProblemSpec(eps_oracle, L=base.L, R=base.R, x0=base.x0, N=base.N, eps=eps)
    res = klm_run(spec, PureHard(), timing=False)
    assert res.f_bar - inst.f_star <= res.upper_bound + eps + 1e-9
    assert res.upper_bound <= spec.rate_bound + 1e-9


@pytest.mark.parametrize("seed", range(4))
def test_f_lower_never_raises_bound(seed):
    from klmopt.dual import build_dual, solve_hard_step

    spec, inst = planted_spec(seed, 20, p=4, k=10)
    low = ProblemSpec(inst, L=spec.L, R=spec.R, x0=spec.x0, N=spec.N,
                      f_lower=inst.f_star - 0.1)
    res = klm_run(spec, PureHard(), timing=False)
    bundle = Bundle(spec.dim)
    for x in res.iterates:
        bundle.append(Cut.from_sample(spec.evaluate(x)))
    for M, val in res.bound_history:
        alt = solve_hard_step(build_dual(bundle, low, M))
        assert alt.dual_value <= val + 2e-9


def test_trace_shape_and_monotone_best():
    spec, _ = planted_spec(5, 15)
    res = klm_run(spec, EveryK(3), timing=False)
    assert [r.iteration for r in res.trace] == list(range(1, 16))
    best = [r.f_best for r in res.trace]
    assert all(b <= a for a, b in zip(best, best[1:]))
    assert all((r.bound_upper is not None) == (r.step_type == HARD) for r in res.trace)
    assert all(r.elapsed_us == 0 for r in res.trace)


def test_kelley_lower_bound_is_valid_and_monotone():
    spec, inst = planted_spec(6, 30, p=3, k=10, R_scale=1.2)
    res = kelley_baseline(spec, timing=False)
    lows = [r.cert_lower for r in res.trace[1:]]
    assert all(b >= a for a, b in zip(lows, lows[1:]))
    assert lows[-1] <= inst.f_star + 1e-9 <= res.f_bar + 2e-9
    assert res.f_bar == res.f_best
