import csv
import json
import subprocess
import sys

import pytest

from conftest import TRIANGLE
from gridattack.cli import EXIT_INFEASIBLE, EXIT_OK, EXIT_PARSE, EXIT_USAGE, bundled_cases, main


def _rows(path):
    lines = [l for l in path.read_text().splitlines() if not l.startswith("#")]
    return list(csv.DictReader(lines))


def test_bundled_listing():
    names = bundled_cases()
    assert {"five_bus.case", "triangle3.case", "overflow5.toml", "sweep5.toml"} <= set(names)


def test_ems_triangle_has_no_critical_pairs(tmp_path):
    assert main(["ems", "triangle3", "--out", str(tmp_path)]) == EXIT_OK
    report = json.loads((tmp_path / "ems_report.json").read_text())
    assert report["critical"] == []
    assert report["dispatch"]["status"] == "optimal"
    assert report["state_estimation"]["bdd_alarm"] is False


def test_ems_tau_zero_lists_all_pairs(tmp_path):
    assert main(["ems", "triangle3", "--tau", "0", "--out", str(tmp_path), "--format", "csv"]) == EXIT_OK
    rows = _rows(tmp_path / "ems_critical.csv")
    # 3 base rows plus 3 contingencies x 2 monitored branches
    assert len(rows) == 3 + 6


def test_ems_rejects_bad_tau(tmp_path):
    assert main(["ems", "triangle3", "--tau", "1.5", "--out", str(tmp_path)]) == EXIT_USAGE


def test_ems_corrupted_case(tmp_path, capsys):
    bad = tmp_path / "bad.case"
    bad.write_text(TRIANGLE.replace("L13 1 3 0.1 100", "L13 1 3 oops 100"))
    assert main(["ems", str(bad), "--out", str(tmp_path)]) == EXIT_PARSE
    assert "line 12" in capsys.readouterr().err


def test_ems_infeasible_sced(tmp_path, capsys):
    case = tmp_path / "tight.case"
    case.write_text(TRIANGLE.replace("L13 1 3 0.1 100", "L13 1 3 0.1 20"))
    assert main(["ems", str(case), "--out", str(tmp_path)]) == EXIT_INFEASIBLE
    assert "violated" in capsys.readouterr().err


def test_ems_emits_lp(tmp_path):
    lp = tmp_path / "sced.lp"
    assert main(["ems", "five_bus", "--out", str(tmp_path), "--emit-lp", str(lp)]) == EXIT_OK
    assert lp.read_text().startswith("\\ SCED five_bus")


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("GRIDATTACK_OUT", str(tmp_path / "env"))
    assert main(["ems", "triangle3"]) == EXIT_OK
    assert (tmp_path / "env" / "ems_report.json").is_file()


def test_attack_zero_budget_columns_equal(tmp_path):
    code = main(["attack", "five_bus", "--target", "L14", "--contingency", "L45", "--n1", "0",
                 "--out", str(tmp_path)])
    assert code == EXIT_OK
    row = _rows(tmp_path / "attack_flows.csv")[0]
    assert row["predicted_pct"] == row["physical_pct"] == row["cyber_pct"]


def test_attack_overflow_scenario(tmp_path):
    assert main(["attack", "--config", "overflow5", "--out", str(tmp_path)]) == EXIT_OK
    rows = _rows(tmp_path / "attack_flows.csv")
    assert len(rows) == 4
    assert max(float(r["physical_pct"]) for r in rows) > 100.0
    assert all(float(r["cyber_max_ctg_pct"]) <= 100.0 + 1e-4 for r in rows)
    loop = json.loads((tmp_path / "attack_loop.json").read_text())
    assert len(loop) == 4 and loop[0]["spec"]["target_contingency"] == "L45"


def test_attack_dcopf_scenario(tmp_path):
    assert main(["attack", "--config", "dcopf_vs_sced5", "--out", str(tmp_path)]) == EXIT_OK
    for r in _rows(tmp_path / "attack_flows.csv"):
        assert float(r["predicted_pct"]) > 100.0
        assert float(r["physical_pct"]) <= 100.0


def test_attack_flags_override_config(tmp_path):
    code = main(["attack", "--config", "dcopf_vs_sced5", "--n1", "0.004", "--ls", "0.2",
                 "--out", str(tmp_path)])
    assert code == EXIT_OK
    text = (tmp_path / "attack_flows.csv").read_text()
    assert "# L_S: 0.2" in text and len(_rows(tmp_path / "attack_flows.csv")) == 1


def test_attack_spec_file(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"target_branch": "L14", "target_contingency": "L45", "N1": 0.004}))
    assert main(["attack", "five_bus", "--spec", str(spec), "--n1", "0.004", "--out", str(tmp_path)]) == 0


def test_attack_needs_target(tmp_path):
    assert main(["attack", "five_bus", "--out", str(tmp_path)]) == EXIT_USAGE


def test_attack_bad_spec_is_parse_error(tmp_path):
    assert main(["attack", "five_bus", "--target", "L14", "--ls", "3", "--out", str(tmp_path)]) == EXIT_PARSE


def test_sweep_two_targets(tmp_path):
    code = main(["sweep", "five_bus", "--targets", "L14|L45 L13", "--n1", "0.004 0.008", "--ls", "0.1",
                 "--out", str(tmp_path)])
    assert code == EXIT_OK
    rows = _rows(tmp_path / "sweep.csv")
    assert [(r["target"], r["contingency"]) for r in rows] == [("L13", ""), ("L14", "L45")]


def test_sweep_empty_grid_is_usage_error(tmp_path):
    assert main(["sweep", "five_bus", "--n1", "", "--out", str(tmp_path)]) == EXIT_USAGE


def test_sweep_unknown_target_is_usage_error(tmp_path):
    assert main(["sweep", "five_bus", "--targets", "L77", "--out", str(tmp_path)]) == EXIT_USAGE


def test_sweep_range_syntax_and_determinism(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["sweep", "--config", "sweep5", "--out", str(a)]) == EXIT_OK
    assert main(["sweep", "--config", "sweep5", "--out", str(b), "--jobs", "2"]) == EXIT_OK
    assert (a / "sweep.csv").read_bytes() == (b / "sweep.csv").read_bytes()
    header = _rows(a / "sweep.csv")[0]
    assert "pf_N1=0.02" in header and "pf_N1=0.002" in header


def test_case_check(capsys):
    assert main(["case", "check", "ieee14"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "14 buses" in out and "radial branches: L7-8" in out


def test_case_convert_matpower(tmp_path):
    from importlib import resources

    from gridattack.grid import bundled_case, load_case

    src = str(resources.files("gridattack") / "cases" / "case3_sample.m")
    out = tmp_path / "c3.case"
    assert main(["case", "convert", src, str(out), "--loss-fraction", "0"]) == EXIT_OK
    case = load_case(out)
    ref = bundled_case("triangle3_attack")
    assert case.loads().tolist() == ref.loads().tolist()
    assert [b.rating_longterm for b in case.branches] == [b.rating_longterm for b in ref.branches]


def test_missing_command_and_unknown_command():
    assert main([]) == EXIT_USAGE
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == EXIT_USAGE


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "gridattack", "case", "check", "triangle3"],
                         capture_output=True, text=True, cwd=tmp_path)
    assert res.returncode == 0 and "3 buses" in res.stdout
