import json
import math

import numpy as np
import pytest

from sqpcc.cli import main
from sqpcc.registry import get_problem
from sqpcc.solver import SolveOptions, sqpcc_solve
from sqpcc.traceio import path_data, plot_data, read_trace_csv, trace_rows, trace_to_csv, write_json


def _trace():
    prob = get_problem("example51")
    return sqpcc_solve(prob.problem, [2.0, 0.0], SolveOptions(hessian="bfgs", reference=prob.reference))


def test_csv_round_trip_is_bit_exact():
    tr = _trace()
    text = trace_to_csv(tr)
    rows = read_trace_csv(text)
    expect = trace_rows(tr)
    assert len(rows) == len(expect) == len(tr.records)
    for got, want in zip(rows, expect):
        assert got.keys() == want.keys()
        for key, v in want.items():
            if isinstance(v, float) and math.isnan(v):
                assert math.isnan(got[key])
            else:
                assert got[key] == v, key


def test_csv_columns():
    header = trace_to_csv(_trace()).splitlines()[0].split(",")
    assert header[:3] == ["k", "w[0]", "w[1]"]
    assert header[-7:] == ["kkt_residual", "step_norm", "err_to_ref", "branch_signature",
                           "num_candidates", "r_norm", "kappa"]
    assert "xi[0]" in header and "nu[0]" in header


def test_last_row_has_empty_step_cells():
    rows = read_trace_csv(trace_to_csv(_trace()))
    assert rows[-1]["step_norm"] is None and rows[-1]["branch_signature"] == ""
    assert rows[0]["branch_signature"] in ("G", "H")


def test_plot_and_path_data():
    text = plot_data([1.0, None, 0.25])
    assert text.splitlines() == ["# iteration error", "0 1", "2 0.25"]
    lines = path_data(_trace()).splitlines()
    assert lines[0] == "# w1 w2" and lines[1] == "2 0"


def test_json_handles_numpy_and_non_finite(tmp_path):
    out = tmp_path / "s.json"
    write_json({"a": np.array([1.0, 2.0]), "b": np.inf, "c": np.bool_(True), "d": np.int64(3)}, str(out))
    assert json.loads(out.read_text()) == {"a": [1.0, 2.0], "b": "inf", "c": True, "d": 3}


# command line


def test_solve_converges(capsys, tmp_path):
    trace = tmp_path / "t.csv"
    code = main(["solve", "leyffer", "--x0", "0,2", "--trace", str(trace), "--json"])
    assert code == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["status"] == "converged"
    assert np.allclose(summary["final"]["w"], [1.0, 0.0])
    assert summary["limit_classification"] == "S"
    assert read_trace_csv(str(trace))[-1]["kkt_residual"] <= 1e-10


def test_solve_max_iterations_exit_code(tmp_path):
    out = tmp_path / "s.json"
    code = main(["solve", "example51", "--hessian", "const:5,10", "--max-iter", "5", "--json", str(out)])
    assert code == 2
    assert json.loads(out.read_text())["status"] == "max-iterations"


def test_constant_hessian_rate_reported(capsys):
    assert main(["solve", "example51", "--hessian", "const:5,10", "--max-iter", "200", "--json"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["order"]["classification"] == "linear"
    assert summary["order"]["rate"] == pytest.approx(0.8, rel=0.05)


def test_sqp_baseline_subproblem_failure(capsys):
    assert main(["solve", "leyffer", "--method", "sqp", "--json"]) == 3
    summary = json.loads(capsys.readouterr().out)
    assert summary["limit_classification"] == "M"


def test_classify_reports(capsys):
    assert main(["classify", "leyffer", "--point", "1,0"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["class"] == "S" and rep["b_stationary"] and rep["ssosc"] and rep["licq"]["holds"]
    assert main(["classify", "example54", "--point", "0,0"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["ulsc"] is False and rep["pulsc"] is False and rep["i00_zero"] == [0]
    assert main(["classify", "leyffer", "--point", "0,0"]) == 0
    assert json.loads(capsys.readouterr().out)["class"] == "M"


def test_classify_infeasible_point():
    assert main(["classify", "leyffer", "--point", "1,1"]) == 4


def test_model_file_input(tmp_path, capsys):
    f = tmp_path / "m.mpcc"
    f.write_text("var x, y;\nminimize (x-1)^2 + (y-1)^2;\nsubject to:\n  comp x, y;\n")
    assert main(["solve", str(f), "--x0", "0.5,0.5", "--json"]) == 0
    w = json.loads(capsys.readouterr().out)["final"]["w"]
    assert min(w) == pytest.approx(0.0, abs=1e-12) and max(w) == pytest.approx(1.0)


@pytest.mark.parametrize("argv", [
    [],
    ["solve"],
    ["solve", "no-such-model"],
    ["solve", "leyffer", "--x0", "1,2,3"],
    ["solve", "leyffer", "--x0", "a,b"],
    ["solve", "leyffer", "--hessian", "newton"],
    ["classify", "leyffer"],
    ["bench", "--suite", "other"],
    ["bench", "--suite", "paper", "--only", "no-such-run"],
])
def test_usage_errors_exit_1(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 1


def test_model_syntax_error_exit_1(tmp_path, capsys):
    f = tmp_path / "bad.mpcc"
    f.write_text("var x;\nminimize x^2.5;\n")
    assert main(["classify", str(f), "--point", "0"]) == 1
    assert "line 2, column 12" in capsys.readouterr().err


def test_bench_single_run(tmp_path, capsys):
    out = tmp_path / "bench"
    assert main(["bench", "--suite", "paper", "--out", str(out), "--only", "leyffer-spurious"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 1 and lines[0].startswith("[PASS] criterion 4:")
    assert (out / "leyffer-spurious.csv").exists()
    assert (out / "leyffer-spurious-error.dat").exists()
    summary = json.loads((out / "summary.json").read_text())
    assert [c["passed"] for c in summary["criteria"]] == [True]
    assert len(summary["runs"]) == 1
