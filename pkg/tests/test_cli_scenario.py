import csv
import json
import re

import numpy as np
import pytest

from junction_control.cli import main
from junction_control.scenario import SHIPPED, ScenarioError, load_scenario, parse_scenario

SMALL = {
    "name": "small",
    "geometry": {"edges": 2, "length": 4.0},
    "edges": [
        {"family": "sin_quadratic", "sigma": 1.0, "kappa": 2.0, "theta": 0.5, "gamma": 0.3, "lambda": 0.1,
         "rho": 1.0},
        {"family": "constant", "sigma": 1.0, "kappa": 1.0, "drift": 0.0, "cost": 0.5},
    ],
    "junction": {"mode": "linear", "floor": 0.2},
    "terminal": {"family": "tanh", "value": 1.0, "slopes": [0.2, 0.2], "scale": 1.0},
    "horizon": {"T": 0.5},
    "grid": {"n_time": 50, "n_space": 40},
    "mc": {"n_paths": 300, "dt": 0.01, "seed": 3, "start": {"edge": 1, "x": 0.5}},
}


def _write(tmp_path, data, name="s.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data, indent=2))
    return path


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_shipped_scenarios_load():
    for name in SHIPPED:
        sc = load_scenario(name)
        assert sc.name == name
        assert sc.problem.edge_count == len(sc.problem.edges)


def test_quadratic_weights_default_to_sigma_squared():
    data = json.loads(json.dumps(SMALL))
    data["junction"] = {"mode": "quadratic", "floor": 0.2}
    data["edges"][1]["sigma"] = 0.8
    sc = parse_scenario(json.dumps(data))
    assert sc.problem.junction.quad_weights == pytest.approx((1.0, 0.64), rel=1e-15)


def test_unknown_key_rejected_with_line():
    text = json.dumps(SMALL, indent=2).replace('"rho": 1.0', '"rho": 1.0,\n      "rh0": 2.0')
    with pytest.raises(ScenarioError) as exc:
        parse_scenario(text, "bad.json")
    assert "rh0" in str(exc.value)
    line = text.splitlines().index('      "rh0": 2.0') + 1
    assert exc.value.line == line
    assert str(exc.value).startswith(f"bad.json:{line}:")


def test_bad_value_reports_line():
    text = json.dumps(SMALL, indent=2).replace('"floor": 0.2', '"floor": -0.2')
    with pytest.raises(ScenarioError) as exc:
        parse_scenario(text, "bad.json")
    assert exc.value.line is not None
    assert "floor" in text.splitlines()[exc.value.line - 1] or "junction" in text.splitlines()[exc.value.line - 1]


def test_malformed_json():
    with pytest.raises(ScenarioError) as exc:
        parse_scenario('{\n  "name": "x",\n  "geometry": {\n}', "m.json")
    assert exc.value.line is not None and "malformed" in exc.value.message


def test_missing_scenario():
    with pytest.raises(ScenarioError):
        load_scenario("no_such_scenario")


def test_qp_example(capsys):
    assert main(["qp", "--p", "3,1,2", "--floor", "0.1"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "alpha = [0.1, 0.8, 0.1]"
    assert out[1] == "H0 = 1.3"


def test_qp_quadratic(capsys):
    assert main(["qp", "--p=0,0", "--floor", "0.1", "--mode", "quadratic", "--weights", "1,4"]) == 0
    out = capsys.readouterr().out
    assert "alpha = [0.8, 0.2]" in out and "H0 = 0.4" in out and "multiplier = 0.8" in out


def test_qp_input_errors(capsys):
    assert main(["qp", "--p", "0,0,0", "--floor", "0.4"]) == 2
    assert "error" in capsys.readouterr().err
    assert main(["qp", "--p", "0,x", "--floor", "0.1"]) == 2
    assert main(["qp", "--p", "0,0", "--floor", "0.1", "--mode", "quadratic"]) == 2


def test_solve_zero_writes_zero_values(tmp_path, capsys):
    assert main(["solve", "zero", "--out-dir", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "values.csv")
    assert rows[0] == ["edge", "time_index", "space_index", "t", "x", "u", "dudx"]
    assert all(float(r[5]) == 0.0 and float(r[6]) == 0.0 for r in rows[1:])
    j = _rows(tmp_path / "junction.csv")
    assert j[0] == ["time_index", "t", "u0", "p_1", "p_2", "alpha_1", "alpha_2", "h0_residual"]
    assert len(j) == 202
    # every float is written in full round-trip precision
    assert re.fullmatch(r"-?\d\.\d{17}e[+-]\d{2}", rows[1][3])


def test_time_stride(tmp_path):
    assert main(["solve", "zero", "--out-dir", str(tmp_path), "--time-stride", "50"]) == 0
    levels = {int(r[1]) for r in _rows(tmp_path / "values.csv")[1:]}
    assert levels == {0, 50, 100, 150, 200}


def test_scenario_error_exit_code(tmp_path, capsys):
    bad = dict(SMALL, extra=1)
    path = _write(tmp_path, bad)
    assert main(["solve", str(path), "--out-dir", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert re.search(r"s\.json:\d+: .*extra", err)


def test_seed_is_mandatory(tmp_path, capsys):
    data = json.loads(json.dumps(SMALL))
    del data["mc"]["seed"]
    path = _write(tmp_path, data)
    assert main(["simulate", str(path), "--out-dir", str(tmp_path / "o")]) == 2
    assert "seed" in capsys.readouterr().err
    assert main(["simulate", str(path), "--out-dir", str(tmp_path / "o"), "--seed", "4"]) == 0


def test_validate_exit_codes(tmp_path, capsys):
    assert main(["validate", "section5"]) == 0
    data = json.loads(json.dumps(SMALL))
    data["terminal"]["slopes"] = [1.0, 1.0]  # compatibility fails
    assert main(["validate", str(_write(tmp_path, data))]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_simulate_outputs(tmp_path):
    path = _write(tmp_path, SMALL)
    assert main(["simulate", str(path), "--out-dir", str(tmp_path / "o"), "--traces", "3"]) == 0
    rows = _rows(tmp_path / "o" / "ensemble.csv")
    assert rows[0] == ["path", "total", "edge_cost", "junction_cost", "terminal_cost", "local_time", "hits",
                       "final_edge", "final_x"]
    assert len(rows) == 301
    for r in rows[1:]:
        total, parts = float(r[1]), [float(v) for v in r[2:5]]
        assert total == sum(parts)
        assert int(r[7]) in (1, 2) and float(r[8]) >= 0
    traces = _rows(tmp_path / "o" / "traces.csv")
    assert {r[0] for r in traces[1:]} == {"0", "1", "2"}


def test_runs_are_byte_identical(tmp_path):
    path = _write(tmp_path, SMALL)
    for d in ("a", "b"):
        assert main(["simulate", str(path), "--out-dir", str(tmp_path / d)]) == 0
        assert main(["solve", str(path), "--out-dir", str(tmp_path / d)]) == 0
    for f in ("ensemble.csv", "values.csv", "junction.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    c = tmp_path / "c"
    assert main(["simulate", str(path), "--out-dir", str(c), "--seed", "99"]) == 0
    assert (c / "ensemble.csv").read_bytes() != (tmp_path / "a" / "ensemble.csv").read_bytes()


def test_verify_small(tmp_path, capsys):
    path = _write(tmp_path, SMALL)
    code = main(["verify", str(path), "--out-dir", str(tmp_path / "v")])
    out = capsys.readouterr().out
    assert code == (0 if "overall: PASS" in out else 1)
    rows = _rows(tmp_path / "v" / "verification.csv")
    assert rows[0] == ["check", "value", "tolerance", "pass"]
    assert {r[3] for r in rows[1:]} <= {"true", "false"}
    est = _rows(tmp_path / "v" / "estimates.csv")
    assert est[0] == ["policy", "mean", "std_error", "n_paths", "dt", "seed"]
    assert est[1][0] == "optimal" and int(est[1][3]) == 300
    assert (tmp_path / "v" / "report.txt").read_text().rstrip().endswith(("overall: PASS", "overall: FAIL"))


def test_usage_error_exit_code(capsys):
    assert main(["solve"]) == 2
    assert main(["nonsense"]) == 2


def test_numeric_overrides(tmp_path):
    path = _write(tmp_path, SMALL)
    assert main(["solve", str(path), "--out-dir", str(tmp_path), "--nx", "20", "--nt", "25", "--length", "3"]) == 0
    rows = _rows(tmp_path / "values.csv")[1:]
    xs = np.array(sorted({float(r[4]) for r in rows}))
    assert xs.size == 21 and xs[-1] == pytest.approx(3.0)
    assert max(int(r[1]) for r in rows) == 25
