import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from subsel.cli import bundled_studies, main


@pytest.fixture
def case(tmp_path):
    """Case-study-shaped data: exposure (decreasing), group, AE-free indicator."""
    rng = np.random.default_rng(0)
    n = 300
    exposure = rng.uniform(0, 10, n)
    group = rng.integers(0, 2, n)
    p = 1 / (1 + np.exp(-(3 - 0.5 * exposure + 0.5 * group)))
    y = (rng.uniform(size=n) < p).astype(int)
    t = np.tile([0, 1], n // 2)
    with open(tmp_path / "data.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["exposure", "group", "ae_free", "trt"])
        for e, g, yi, ti in zip(exposure, group, y, t):
            w.writerow([repr(float(e)), int(g), int(yi), int(ti)])
    schema = {
        "columns": [
            {"name": "exposure", "kind": "continuous", "direction": "decreasing"},
            {"name": "group", "kind": "binary", "direction": "increasing"},
        ],
        "response": "ae_free",
        "treatment": "trt",
    }
    (tmp_path / "schema.json").write_text(json.dumps(schema))
    with open(tmp_path / "probes.csv", "w") as fh:
        fh.write("exposure,group\n0.5,1\n9.5,0\n")
    return tmp_path


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def select_args(case, *extra):
    return ["select", "--data", case / "data.csv", "--schema", case / "schema.json", "--seed", 1, *extra]


def test_select_iss_region(case, capsys):
    code, out, err = run(select_args(case, "--method", "iss", "--tau", 0.8, "--alpha", 0.05, "--side", "lower"), capsys)
    assert code == 0
    doc = json.loads(out)
    region = doc["regions"]["lower"]
    assert region["side"] == "lower" and region["tau"] == 0.8 and region["alpha"] == 0.05
    assert doc["config"]["seed"] == 1
    assert len(region["generators"]) >= 1


def test_select_with_probes(case, capsys):
    out = case / "region.json"
    code, _, _ = run(select_args(case, "--method", "iss", "--tau", 0.5, "--alpha", 0.1,
                                 "--side", "two-sided", "--out", out, "--probes", case / "probes.csv"), capsys)
    assert code == 0
    rows = list(csv.DictReader(open(case / "region.selected.csv")))
    assert [r["selected"] for r in rows] == ["1", "0"]
    assert set(rows[0]) == {"exposure", "group", "selected", "selected_upper"}


def test_select_glm_probes(case, capsys):
    code, _, _ = run(select_args(case, "--method", "glm", "--tau", 0.5, "--alpha", 0.1, "--out", case / "g.json",
                                 "--probes", case / "probes.csv", "--selected", case / "sel.csv"), capsys)
    assert code == 0
    rows = list(csv.DictReader(open(case / "sel.csv")))
    assert [r["selected"] for r in rows] == ["1", "0"]
    assert "extrapolated" in rows[0]
    doc = json.loads((case / "g.json").read_text())
    assert doc["regions"]["lower"]["link"] == "logit"


def test_select_bad_alpha(case, capsys):
    code, out, err = run(select_args(case, "--method", "iss", "--tau", 0.8, "--alpha", 1.5), capsys)
    assert code == 2 and out == ""
    assert err.count("\n") == 1 and "alpha" in err


def test_select_separated(tmp_path, capsys):
    (tmp_path / "d.csv").write_text("x,y\n" + "".join(f"{i},{int(i > 4)}\n" for i in range(10)))
    (tmp_path / "s.json").write_text(json.dumps({"columns": [{"name": "x"}], "response": "y"}))
    code, _, err = run(["select", "--data", tmp_path / "d.csv", "--schema", tmp_path / "s.json",
                        "--method", "glm", "--tau", 0.5, "--seed", 0], capsys)
    assert code == 4 and "separat" in err


def test_select_data_error(case, capsys):
    code, _, _ = run(["select", "--data", case / "missing.csv", "--schema", case / "schema.json",
                      "--method", "iss", "--tau", 0.5, "--seed", 0], capsys)
    assert code == 3


def test_select_direction_none_is_config_error(tmp_path, capsys):
    (tmp_path / "d.csv").write_text("x,y\n1,0\n2,1\n")
    (tmp_path / "s.json").write_text(json.dumps({"columns": [{"name": "x", "direction": "none"}], "response": "y"}))
    code, _, _ = run(["select", "--data", tmp_path / "d.csv", "--schema", tmp_path / "s.json",
                      "--method", "iss", "--tau", 0.5, "--seed", 0], capsys)
    assert code == 2


def test_seed_is_mandatory(case, capsys):
    with pytest.raises(SystemExit) as info:
        main(["select", "--data", str(case / "data.csv"), "--schema", str(case / "schema.json"),
              "--method", "iss", "--tau", "0.5"])
    assert info.value.code == 2


def test_select_deterministic(case, capsys):
    args = select_args(case, "--method", "glm", "--tau", 0.6, "--alpha", 0.1, "--side", "two-sided")
    _, a, _ = run(args, capsys)
    _, b, _ = run(args, capsys)
    assert a == b


def pseudo_args(case, *extra):
    return ["pseudo", "--data", case / "data.csv", "--schema", case / "schema.json", *extra]


def test_pseudo_constant_learner(case, capsys):
    code, _, _ = run(pseudo_args(case, "--seed", 4, "--learner", "constant", "--out", case / "ps.csv"), capsys)
    assert code == 0
    rows = list(csv.DictReader(open(case / "ps.csv")))
    for r in rows:
        assert float(r["y_tilde"]) == 4 * (int(r["trt"]) - 0.5) * int(r["ae_free"])
    prov = json.loads((case / "ps.provenance.json").read_text())
    assert prov["K"] == 4 and prov["seed"] == 4 and len(prov["fold_of_row"]) == len(rows)


def test_pseudo_missing_treatment(case, capsys):
    code, _, _ = run(pseudo_args(case, "--seed", 1, "--treatment", "nope"), capsys)
    assert code == 3


def test_pseudo_deterministic(case, capsys):
    args = pseudo_args(case, "--seed", 8, "--provenance", case / "p.json")
    _, a, _ = run(args, capsys)
    first = (case / "p.json").read_bytes()
    _, b, _ = run(args, capsys)
    assert a == b and first == (case / "p.json").read_bytes()


def test_pseudo_bad_propensity(case, capsys):
    code, _, _ = run(pseudo_args(case, "--seed", 1, "--propensity", "1.2"), capsys)
    assert code == 2


def test_bundled_study_listed():
    assert "logistic_univariate" in bundled_studies()


def test_simulate_bundled(tmp_path, capsys):
    out = tmp_path / "rep.json"
    args = ["simulate", "--study", "logistic_univariate", "--B", 20, "--M", 5000, "--out", out]
    code, stdout, _ = run(args, capsys)
    assert code == 0 and stdout == ""
    first = out.read_bytes()
    doc = json.loads(first)
    assert doc["config"]["B"] == 20 and doc["config"]["seed"] == 20240501
    assert (tmp_path / "rep.csv").exists()
    run(args, capsys)
    assert out.read_bytes() == first
    code, csv_out, _ = run(["report", out], capsys)
    assert code == 0 and csv_out == (tmp_path / "rep.csv").read_text()


def test_simulate_unknown_scenario(capsys):
    code, _, err = run(["simulate", "--study", "logistic_univariate", "--scenario", "unknown", "--B", 1], capsys)
    assert code == 2 and "unknown scenario" in err


def test_simulate_config_file(tmp_path, capsys):
    cfg = {"scenario": "step", "n": 100, "B": 2, "M": 1000, "alpha": 0.1, "seed": 3, "methods": [{"name": "iss"}]}
    (tmp_path / "s.json").write_text(json.dumps(cfg))
    code, out, _ = run(["simulate", "--config", tmp_path / "s.json"], capsys)
    assert code == 0 and json.loads(out)["scenario"]["name"] == "step"
    del cfg["seed"]
    (tmp_path / "s.json").write_text(json.dumps(cfg))
    code, _, _ = run(["simulate", "--config", tmp_path / "s.json"], capsys)
    assert code == 2


def test_report_bad_input(tmp_path, capsys):
    (tmp_path / "x.json").write_text("{}")
    code, _, _ = run(["report", tmp_path / "x.json"], capsys)
    assert code == 3


def test_console_entry_point_streams(case):
    proc = subprocess.run(
        [sys.executable, "-m", "subsel.cli", "-v", "select", "--data", str(case / "data.csv"),
         "--schema", str(case / "schema.json"), "--method", "iss", "--tau", "0.99", "--seed", "0"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    json.loads(proc.stdout)  # stdout holds only the artifact
    assert "empty" in proc.stderr
