import json

import pytest
import yaml
from hypothesis import given, settings, strategies as st

from coopsym.cli import main
from coopsym.config import ConfigurationError
from coopsym.scenario import (bundled_scenarios, evaluate_expectation, load_scenario,
                              parse_grid_override, parse_scenario, parse_tol_overrides,
                              validate_report)

SMALL = {
    "name": "tiny",
    "domain": {"kind": "ball", "r_outer": 1.0},
    "grid": {"n_r": 8, "n_theta": 16},
    "system": {"name": "lane_emden", "params": {"p": 3.0, "q": 3.0}},
    "seed": {"strategy": "diagonal_scalar", "p": 3.0},
    "pipeline": ["solve", {"spectrum": {"k": 4}}, "schwarz", "coupling"],
    "expect": {"spectrum.morse_index": 1, "schwarz.classification": "radial"},
}


def write(tmp_path, data, name="sc.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return str(path)


def test_bundled_scenarios_listed(capsys):
    assert main(["list"]) == 0
    out = capsys.readouterr().out.split()
    assert out == bundled_scenarios()
    assert {"exp_branch", "lane_emden_diag", "lane_emden_annulus"} <= set(out)


def test_report_to_stdout_is_valid_json(tmp_path, capsys):
    code = main(["report", "--config", write(tmp_path, SMALL)])
    report = json.loads(capsys.readouterr().out)
    assert code == 0 and report["passed"]
    validate_report(report)
    assert [s["stage"] for s in report["stages"]] == ["solve", "spectrum", "schwarz", "coupling"]


def test_report_is_deterministic(tmp_path, capsys):
    cfg = write(tmp_path, SMALL)
    main(["report", "--config", cfg])
    first = capsys.readouterr().out
    main(["report", "--config", cfg])
    assert capsys.readouterr().out == first


def test_out_directory_contents(tmp_path):
    out = tmp_path / "run"
    assert main(["report", "--config", write(tmp_path, SMALL), "--out", str(out), "-q"]) == 0
    report = json.loads((out / "report.json").read_text())
    validate_report(report)
    assert (out / "solution.csv").exists()


def test_failed_expectation_exits_one(tmp_path):
    bad = dict(SMALL, expect={"spectrum.morse_index": 2})
    out = tmp_path / "run"
    assert main(["report", "--config", write(tmp_path, bad), "--out", str(out), "-q"]) == 1
    report = json.loads((out / "report.json").read_text())
    assert not report["passed"]
    validate_report(report)


@pytest.mark.parametrize("mutate", [
    lambda d: d.pop("system"),
    lambda d: d.update(colour="red"),
    lambda d: d.update(pipeline=[]),
    lambda d: d.update(pipeline=["spectrum", "solve"]),
    lambda d: d.update(pipeline=["solve", "dance"]),
    lambda d: d["system"].update(name="navier_stokes"),
    lambda d: d["system"]["params"].update(p=0.5),
    lambda d: d["grid"].update(n_theta=7),
    lambda d: d["domain"].update(kind="annulus"),
    lambda d: d["seed"].update(strategy="magic"),
    lambda d: d.update(tolerances={"no_such_tol": 1.0}),
])
def test_malformed_config_exits_two(tmp_path, capsys, mutate):
    data = yaml.safe_load(yaml.safe_dump(SMALL))
    mutate(data)
    code = main(["report", "--config", write(tmp_path, data), "--out", str(tmp_path / "o")])
    assert code == 2
    assert "configuration error" in capsys.readouterr().err
    assert not (tmp_path / "o" / "report.json").exists()


def test_unparseable_yaml_exits_two(tmp_path):
    path = tmp_path / "broken.yaml"
    path.write_text("name: [unclosed\n")
    assert main(["report", "--config", str(path)]) == 2


def test_missing_config_exits_two():
    assert main(["report", "--config", "no_such_scenario_anywhere"]) == 2


def test_grid_and_tolerance_overrides(tmp_path, capsys):
    cfg = write(tmp_path, SMALL)
    main(["report", "--config", cfg, "--grid", "6x12", "--tol-override", "tol_res=1e-8"])
    report = json.loads(capsys.readouterr().out)
    assert report["scenario"]["grid"] == {"n_r": 6, "n_theta": 12}
    assert report["provenance"]["tolerances"]["tol_res"] == 1e-8
    assert main(["report", "--config", cfg, "--grid", "six"]) == 2
    assert main(["report", "--config", cfg, "--tol-override", "tol_res"]) == 2


def test_solve_subcommand_runs_only_solve(tmp_path, capsys):
    main(["solve", "--config", write(tmp_path, SMALL), "--out", str(tmp_path / "o"), "-q"])
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert [s["stage"] for s in report["stages"]] == ["solve"]


def test_branch_subcommand(tmp_path):
    data = {
        "name": "tiny_branch",
        "domain": {"kind": "ball"},
        "grid": {"n_r": 6, "n_theta": 12},
        "system": {"name": "exponential", "params": {"lam": 0.0, "mu": 0.0}},
        "pipeline": [{"branch": {"linspace": {"from": {"lam": 0.0, "mu": 0.0},
                                              "to": {"lam": 0.3, "mu": 0.3}, "steps": 3},
                                 "diagnostics": True, "include_start": False}},
                     "spectrum"],
        "expect": {"branch.max_morse_index": 0, "branch.all_fully_coupled_caps": True},
    }
    out = tmp_path / "o"
    assert main(["branch", "--config", write(tmp_path, data), "--out", str(out), "-q"]) == 0
    report = json.loads((out / "report.json").read_text())
    assert [s["stage"] for s in report["stages"]] == ["branch"]
    assert len(list(out.glob("branch_*.csv"))) == 4


def test_branch_subcommand_without_branch_stage(tmp_path):
    assert main(["branch", "--config", write(tmp_path, SMALL)]) == 2


def test_verify_suite_unknown_exits_two():
    assert main(["verify", "no_such_suite"]) == 2


def test_every_bundled_scenario_parses():
    for name in bundled_scenarios():
        sc = load_scenario(name)
        assert sc.name == name
        assert sc.pipeline


def test_parse_helpers():
    assert parse_grid_override("16X32") == (16, 32)
    assert parse_tol_overrides(["eps_sign=1e-10", "quad_order=4"]) == {
        "eps_sign": 1e-10, "quad_order": 4.0}
    with pytest.raises(ConfigurationError):
        parse_scenario(["not", "a", "mapping"])


scalars = st.one_of(st.integers(-5, 5), st.floats(-5, 5, allow_nan=False))


@settings(max_examples=50, deadline=None)
@given(actual=scalars, target=scalars,
       op=st.sampled_from(["eq", "ne", "le", "lt", "ge", "gt"]))
def test_expectation_operators(actual, target, op):
    import operator
    py = {"eq": operator.eq, "ne": operator.ne, "le": operator.le, "lt": operator.lt,
          "ge": operator.ge, "gt": operator.gt}[op]
    res = evaluate_expectation({"s": {"x": actual}}, "s.x", {op: target})
    assert res["passed"] == py(actual, target)


def test_expectation_approx_and_paths():
    out = {"s": {"vals": [1.0, 2.0], "nested": {"k": "radial"}}}
    assert evaluate_expectation(out, "s.vals.1", {"approx": 2.0 + 1e-9, "rel": 1e-6})["passed"]
    assert evaluate_expectation(out, "s.nested.k", "radial")["passed"]
    assert evaluate_expectation(out, "s.nested.k", {"in": ["radial", "foliated_schwarz"]})["passed"]
    assert not evaluate_expectation(out, "s.missing", 1)["passed"]
    assert not evaluate_expectation(out, "t.x", 1)["passed"]


@pytest.mark.parametrize("name", bundled_scenarios())
def test_bundled_scenario_passes(tmp_path, name):
    out = tmp_path / name
    assert main(["report", "--config", name, "--out", str(out), "-q"]) == 0
    validate_report(json.loads((out / "report.json").read_text()))


def test_verify_suite(tmp_path):
    out = tmp_path / "v"
    assert main(["verify", "mp_props", "--out", str(out), "-q"]) == 0
    report = json.loads((out / "report.json").read_text())
    validate_report(report)
    assert report["passed"]
