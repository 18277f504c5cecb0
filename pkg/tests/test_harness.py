import json
import os

import numpy as np
import pytest

from klmopt.core import ProblemSpec, RunRecord
from klmopt.harness import (CSV_HEADER, DEFAULT_FIGURE_GRID, Cell, ExperimentPlan,
                            figure_rows, figure_to_csv, make_problem, read_trace_csv,
                            reference_optimum, run_cell, run_grid, trace_to_csv)
from klmopt.klm import kelley_baseline
from klmopt.problems import abs1d, gen_linf, gen_planted_maxaffine, linf_minimize

SMALL_LINF = {"problem": "linf", "m": 30, "n": 8, "seed": 1}


def test_reference_abs_shifted():
    spec = ProblemSpec(abs1d(1.0, 3.0), L=1.0, R=4.0, x0=[0.0], N=1)
    ref = reference_optimum(spec, 1e-6)
    assert ref.closed and 0 <= ref.width <= 1e-6
    assert ref.lo <= 0.0 <= ref.hi


@pytest.mark.parametrize("seed", range(3))
def test_reference_planted(seed):
    inst = gen_planted_maxaffine(15, 4, seed)
    spec = ProblemSpec(inst, L=inst.L, R=1.1 * np.linalg.norm(inst.x_star), x0=np.zeros(4), N=1)
    ref = reference_optimum(spec, 1e-7, N=64)
    assert ref.closed and ref.width >= 0
    assert ref.lo - 1e-9 <= inst.f_star <= ref.hi + 1e-9


def test_reference_matches_lp():
    inst = gen_linf(40, 6, 3)
    spec = make_problem({"problem": "linf", "m": 40, "n": 6, "seed": 3, "N": 1})
    ref = reference_optimum(spec, 1e-8, N=64)
    _, val = linf_minimize(inst)
    assert ref.lo - 1e-9 <= val <= ref.hi + 1e-9


def test_reference_unclosed_is_flagged():
    spec = make_problem({**SMALL_LINF, "N": 1})
    ref = reference_optimum(spec, 1e-12, N=4, max_cuts=6)
    assert not ref.closed and ref.width > 0


def test_reference_rejects_bad_accuracy():
    with pytest.raises(ValueError):
        reference_optimum(make_problem({"problem": "abs1d", "N": 1}), 0.0)


def test_kelley_certification_sound():
    spec = make_problem({"problem": "maxaffine", "m": 12, "n": 3, "seed": 2, "N": 40})
    res = kelley_baseline(spec, timing=False)
    for r in res.trace[1:]:
        assert r.cert_lower <= spec.f_star + 1e-9 <= r.f_best + 2e-9
        assert r.certified_gap == pytest.approx(r.f_best - r.cert_lower)


# ---------------------------------------------------------------------------
# problem construction


def test_make_problem_defaults():
    spec = make_problem({"problem": "abs1d", "N": 4})
    assert spec.x0.tolist() == [1.0] and spec.L == 1.0 and spec.R == 1.0
    spec = make_problem({"problem": "resisting", "N": 5, "n": 7})
    assert spec.dim == 7 and spec.f_star == pytest.approx(-1 / np.sqrt(5))
    with pytest.raises(ValueError):
        make_problem({"problem": "nope", "N": 1})


def test_make_problem_linf_doubles_constants():
    spec = make_problem({**SMALL_LINF, "N": 3})
    inst = gen_linf(30, 8, 1)
    x_hat, _ = linf_minimize(inst)
    assert spec.L == 2 * inst.L
    assert spec.R == pytest.approx(2 * np.linalg.norm(x_hat), rel=1e-9)


def test_make_problem_from_instance_file(tmp_path):
    from klmopt.problems import to_json

    path = tmp_path / "inst.json"
    path.write_text(to_json(gen_linf(30, 8, 1)))
    a = make_problem({"instance": str(path), "N": 5})
    b = make_problem({**SMALL_LINF, "N": 5})
    assert a.L == b.L and a.R == b.R


# ---------------------------------------------------------------------------
# CSV


def test_csv_header_and_empty_optionals():
    rows = [RunRecord(1, "init", 1.5, 1.5), RunRecord(2, "hard", 1.0, 1.0, bound_upper=0.25,
                                                      elapsed_us=12)]
    text = trace_to_csv(rows)
    lines = text.splitlines()
    assert lines[0] == ",".join(CSV_HEADER)
    assert lines[0] == "iter,step_type,f_x,f_best,bound_upper,cert_lower,certified_gap,elapsed_us"
    assert lines[1] == "1,init,1.5,1.5,,,,0"
    assert lines[2] == "2,hard,1.0,1.0,0.25,,,12"
    assert read_trace_csv(text) == rows


def test_csv_round_trip_exact():
    res, _ = run_cell({"problem": "maxaffine", "m": 10, "n": 3, "seed": 0}, Cell("kelley", "-", 12),
                      timing=False)
    assert read_trace_csv(trace_to_csv(res.trace)) == res.trace


def test_csv_rejects_wrong_header():
    with pytest.raises(ValueError):
        read_trace_csv("a,b\n1,2\n")


# ---------------------------------------------------------------------------
# grids


def _plan(out_dir, **kw):
    cells = [Cell("klm", pol, N) for N in (4, 16, 64, 256) for pol in ("pure-easy", "pure-hard")]
    return ExperimentPlan(problem=SMALL_LINF, cells=cells, out_dir=str(out_dir),
                          timing=False, **kw)


@pytest.fixture(scope="module")
def grid_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("grid")
    summary = run_grid(_plan(out, reference_accuracy=1e-7))
    return out, summary


def test_grid_writes_one_csv_per_cell(grid_run):
    out, summary = grid_run
    csvs = sorted(f for f in os.listdir(out) if f.endswith(".csv"))
    assert len(csvs) == 8
    assert all(e["status"] == "ok" for e in summary["cells"])
    for e in summary["cells"]:
        text = (out / e["csv"]).read_text()
        assert len(text.splitlines()) == e["N"] + 1
    on_disk = json.loads((out / "summary.json").read_text())
    assert on_disk["schema"] == 1 and len(on_disk["cells"]) == 8
    assert on_disk["config"]["problem"] == SMALL_LINF


def test_grid_errors_within_rate(grid_run):
    _, summary = grid_run
    ref = summary["reference"]
    assert ref["closed"]
    for e in summary["cells"]:
        assert e["f_bar"] - ref["lo"] <= e["rate_bound"] + 1e-9


def test_grid_is_byte_deterministic(grid_run, tmp_path):
    out, summary = grid_run
    again = run_grid(_plan(tmp_path, jobs=2))
    for a, b in zip(summary["cells"], again["cells"]):
        assert (out / a["csv"]).read_bytes() == (tmp_path / b["csv"]).read_bytes()


def test_grid_records_failures(tmp_path):
    cells = [Cell("klm", "pure-easy", 3), Cell("bogus", "pure-easy", 3), Cell("kelley", "-", 3)]
    plan = ExperimentPlan(problem={"problem": "abs1d"}, cells=cells, out_dir=str(tmp_path),
                          timing=False)
    summary = run_grid(plan)
    status = [e["status"] for e in summary["cells"]]
    assert status == ["ok", "failed", "ok"]
    assert "bogus" in summary["cells"][1]["error"]
    assert (tmp_path / summary["cells"][1]["csv"]).read_text().splitlines() == [
        ",".join(CSV_HEADER)]


def test_cell_validation():
    with pytest.raises(ValueError):
        Cell("klm", "pure-easy", 0)


def test_figure_rows_small():
    rows, ref = figure_rows(SMALL_LINF, grid=(4, 16), accuracy=1e-7)
    assert [(r.N, r.policy) for r in rows] == [(4, "pure-easy"), (4, "pure-hard"),
                                               (16, "pure-easy"), (16, "pure-hard")]
    for r in rows:
        assert r.error_lo <= r.error_hi <= r.rate_bound + 1e-9
        assert r.error_halfwidth == pytest.approx(0.5 * ref.width)
    text = figure_to_csv(rows)
    assert text.splitlines()[0].startswith("N,policy,f_bar,error_lo,error_hi")
    assert len(text.splitlines()) == 5


def test_default_grid():
    assert DEFAULT_FIGURE_GRID == (4, 8, 16, 32, 64, 128, 256, 512)
