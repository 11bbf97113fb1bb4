import csv
import io
import json
from pathlib import Path

import numpy as np
import pytest

from coevolve.cli import cli_main
from coevolve.core import Instance, tour_cost
from coevolve.evaluation import evaluate_instances
from coevolve.heuristic_dsl import Target, baseline_heuristic
from coevolve.report import ReportTable, TableShapeError, parse_table, render_table
from coevolve.solvers import GlsParams
from coevolve.tsplib import (
    TsplibParseError,
    load_best_known,
    nint,
    parse_tsplib,
    read_tour,
    read_tsplib,
    tour_cost_original,
    write_tsplib,
)

DATA = Path(__file__).parent / "data" / "tsplib"
THREE = """NAME : tri
TYPE : TSP
DIMENSION : 3
EDGE_WEIGHT_TYPE : EUC_2D
NODE_COORD_SECTION
1 0 0
2 3 0
3 0 4.5
EOF
"""


def test_three_node_round_trip(tmp_path):
    p = tmp_path / "tri.tsp"
    p.write_text(THREE)
    t = read_tsplib(p)
    assert t.name == "tri" and t.dimension == 3
    np.testing.assert_array_equal(t.coords, [[0, 0], [3, 0], [0, 4.5]])
    q = tmp_path / "again.tsp"
    write_tsplib(t, q)
    assert q.read_text() == p.read_text()
    np.testing.assert_array_equal(read_tsplib(q).coords, t.coords)
    # single scale factor: the longer axis spans [0, 1]
    np.testing.assert_allclose(parse_tsplib(p).coords, [[0, 0], [2 / 3, 0], [0, 1]], atol=1e-15)
    assert t.original_cost([0, 1, 2], "real") == pytest.approx(3 + 4.5 + np.hypot(3, 4.5), abs=1e-12)
    assert t.original_cost([0, 1, 2], "nint") == 3 + 5 + nint(np.hypot(3, 4.5))


def test_normalized_tour_scales_back(tmp_path):
    p = tmp_path / "tri.tsp"
    p.write_text(THREE)
    t = read_tsplib(p)
    assert tour_cost(t.to_instance(), [0, 1, 2]) * t.scale == pytest.approx(t.original_cost([0, 1, 2], "real"))


@pytest.mark.parametrize("text,line", [
    (THREE.replace("EUC_2D", "GEO"), 4),
    (THREE.replace("2 3 0", "2 3"), 7),
    (THREE.replace("2 3 0", "2 x 0"), 7),
    (THREE.replace("EOF", "EDGE_WEIGHT_SECTION"), 9),
])
def test_parse_errors_report_line(tmp_path, text, line):
    p = tmp_path / "bad.tsp"
    p.write_text(text)
    with pytest.raises(TsplibParseError) as err:
        read_tsplib(p)
    assert err.value.line == line
    assert f"line {line}" in str(err.value)


def test_dimension_mismatch(tmp_path):
    p = tmp_path / "bad.tsp"
    p.write_text(THREE.replace("DIMENSION : 3", "DIMENSION : 4"))
    with pytest.raises(TsplibParseError):
        read_tsplib(p)


def test_pcb442_and_sidecar():
    t = read_tsplib(DATA / "pcb442.tsp")
    assert t.dimension == 442 and parse_tsplib(DATA / "pcb442.tsp").n == 442
    order = read_tour(DATA / "pcb442.opt.tour")
    assert sorted(order) == list(range(442))
    assert t.original_cost(order) == load_best_known(DATA / "best_known.csv")["pcb442"]
    assert read_tsplib(DATA / "berlin52.tsp").dimension == 52


def test_tour_cost_original_rejects_bad_rounding():
    with pytest.raises(ValueError):
        tour_cost_original(np.zeros((3, 2)), [0, 1, 2], "floor")


def test_nint():
    assert [nint(x) for x in (0.49, 0.5, 1.5, 2.4999)] == [0, 1, 2, 2]


# ---------------------------------------------------------------- report


def test_render_op_aco_rows():
    t = ReportTable("OP_ACO objective values", ("n", "A", "B"),
                    [("400", (17.773, 18.662)), ("1000", (20.061, 21.205))], (3, 3))
    assert render_table(t, "csv").splitlines()[1:] == ["400,17.773,18.662", "1000,20.061,21.205"]
    md = render_table(t, "markdown")
    assert "| 400 | 17.773 | 18.662 |" in md and "| 1000 | 20.061 | 21.205 |" in md


def test_render_tsp_aco_gap_row():
    t = ReportTable("tsp_aco gap", ("n", "x", "y", "z"), [("20", (0.080, 0.525, 0.729))])
    assert render_table(t, "csv").splitlines()[1] == "20,0.080,0.525,0.729"


def test_header_only_and_shape_errors():
    t = ReportTable("empty", ("n", "gap"))
    assert render_table(t, "csv") == "n,gap\n"
    assert render_table(t, "markdown").splitlines()[-1] == "|---|---:|"
    with pytest.raises(TableShapeError):
        ReportTable("ragged", ("n", "a", "b"), [("1", (1.0,))])
    with pytest.raises(TableShapeError):
        ReportTable("decimals", ("n", "a"), [], (3, 3))
    with pytest.raises(ValueError):
        render_table(t, "html")


@pytest.mark.parametrize("fmt", ["csv", "markdown"])
def test_table_round_trip(fmt):
    t = ReportTable("cap", ("n", "a", "b"), [("20", (0.08, 1.5)), ("50", (2.25, 10.0))], (3, 1))
    text = render_table(t, fmt)
    back = parse_table(text, fmt, caption="cap")
    assert render_table(back, fmt) == text
    assert back.decimals == (3, 1)


# ---------------------------------------------------------------- cli


def run(argv, capsys):
    code = cli_main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_cli_usage_errors(capsys):
    assert run(["frobnicate"], capsys)[0] == 2
    assert run(["gen", "--uniform"], capsys)[0] == 2
    assert run(["solve", "--task", "tsp_gls", "--instance", "x.json", "--bogus"], capsys)[0] == 2
    assert run(["report", "/nonexistent/run"], capsys)[0] == 2


def test_cli_runtime_error(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    code, _, err = run(["solve", "--task", "tsp_gls", "--instance", bad], capsys)
    assert code == 1 and "coevolve:" in err


def test_cli_gen_is_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert run(["gen", "--uniform", "--n", 50, "--count", 4, "--seed", 9, "--out", d], capsys)[0] == 0
    files = sorted(p.name for p in a.iterdir())
    assert len(files) == 4
    assert all((a / f).read_bytes() == (b / f).read_bytes() for f in files)
    assert Instance.from_json((a / files[0]).read_text()).n == 50


def test_cli_solve_and_gap(tmp_path, capsys):
    d = tmp_path / "inst"
    run(["gen", "--uniform", "--n", 10, "--count", 2, "--seed", 3, "--out", d], capsys)
    code, out, _ = run(["solve", "--task", "tsp_gls", "--instance", d / "instance_0000.json"], capsys)
    assert code == 0 and "wall_ms" not in json.loads(out)
    code, out, _ = run(["solve", "--task", "tsp_gls", "--instance", d / "instance_0000.json", "--timing"], capsys)
    assert code == 0 and "wall_ms" in json.loads(out)

    code, out, _ = run(["gap", "--task", "tsp_gls", "--instances", d, "--budget", 50], capsys)
    rep = json.loads(out)
    assert code == 0 and rep["batch"] == 2 and rep["gap"] >= 0.0
    insts = [Instance.from_json(p.read_text()) for p in sorted(d.glob("*.json"))]
    expected = evaluate_instances(insts, [0, 1], baseline_heuristic(Target.GLS_GUIDE), "tsp_gls",
                                  solver_params=GlsParams(budget_ls_iters=50), cache={})
    assert rep["gap"] == expected.gap

    code, out, _ = run(["gap", "--task", "tsp_gls", "--uniform", "--n", 10, "--batch", 2, "--format", "csv"], capsys)
    assert code == 0 and out.startswith("n,generator_id,heuristic_id,gap")


def test_cli_heuristic_target_mismatch(tmp_path, capsys):
    h = tmp_path / "h.json"
    h.write_text(baseline_heuristic(Target.ACO_ETA_TSP).to_json())
    d = tmp_path / "inst"
    run(["gen", "--uniform", "--n", 8, "--out", d], capsys)
    assert run(["solve", "--task", "tsp_gls", "--instance", d / "instance_0000.json", "--heuristic", h], capsys)[0] == 2


def test_cli_evolve_report_export(tmp_path, capsys):
    runs = tmp_path / "run"
    argv = ["evolve", "--task", "tsp_gls", "--n", 10, "--generations", 2, "--batch", 2, "--pop-gen", 3,
            "--pop-heur", 3, "--elitism", 1, "--budget", 10, "--seed", 7, "--out", runs]
    assert run(argv, capsys)[0] == 0
    curve = (runs / "curve.csv").read_bytes()
    first = None
    for _ in range(2):
        assert run(["report", runs], capsys)[0] == 0
        assert (runs / "curve.csv").read_bytes() == curve
        text = (runs / "report.md").read_text()
        assert first in (None, text)
        first = text
    again = tmp_path / "again"
    assert run(argv[:-1] + [again], capsys)[0] == 0
    assert (again / "curve.csv").read_bytes() == curve

    d = tmp_path / "inst"
    run(["gen", "--uniform", "--n", 5, "--count", 2, "--kind", "op", "--out", d], capsys)
    code, out, _ = run(["export-coords", d], capsys)
    rows = list(csv.reader(io.StringIO(out)))
    assert code == 0 and rows[0] == ["instance_id", "node", "x", "y", "prize"] and len(rows) == 11
    assert all(r[4] != "" for r in rows[1:])


def test_cli_tsplib(tmp_path, capsys):
    code, out, _ = run(["tsplib", DATA / "berlin52.tsp", "--budget", 200], capsys)
    res = json.loads(out)
    assert code == 0 and res["n"] == 52 and res["gap"] is None and res["cost"] > 0
    side = tmp_path / "bk.csv"
    side.write_text(f"name,best_known\nberlin52,{res['cost']}\n")
    res = json.loads(run(["tsplib", DATA / "berlin52.tsp", "--budget", 200, "--best-known", side], capsys)[1])
    assert res["gap"] == 0.0
