import json

import pytest

from ecmkit.cli import main
from ecmkit.ecm import Manifest, builtin_manifest, write_package
from ecmkit.harness import ExperimentConfig, emit_table, run_experiment


def test_stats_fisher(capsys):
    assert main(["stats", "fisher", "100", "0", "95", "5"]) == 0
    assert capsys.readouterr().out.strip() == "0.0297"


def test_stats_wilson(capsys):
    assert main(["stats", "wilson", "70", "100"]) == 0
    assert capsys.readouterr().out.strip() == "70.0% [60.4, 78.1]"


def test_stats_bad_numbers_is_usage_error(capsys):
    assert main(["stats", "wilson", "7", "0"]) == 2


def test_unknown_subcommand_prints_usage(capsys):
    assert main(["frobnicate"]) == 2
    assert "usage" in capsys.readouterr().err
    assert main([]) == 2
    assert main(["ecm"]) == 2


def test_experiment_run_writes_results(tmp_path, capsys):
    assert main(["experiment", "run", "E4", "--n", "30", "--seed", "7", "--format", "markdown",
                 "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    report = run_experiment(ExperimentConfig("E4", 30, 7))
    assert out == emit_table(report, "markdown")
    [run_dir] = list((tmp_path / "E4").iterdir())
    assert run_dir.name.endswith("-7")
    assert {p.name for p in run_dir.iterdir()} == {"table.md", "table.csv", "manifest.json", "audit.log"}
    assert (run_dir / "table.csv").read_text() == emit_table(report, "csv")
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["master_seed"] == 7 and manifest["config"]["n_trials"] == 30


def test_results_root_env(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("ECMKIT_RESULTS", str(tmp_path))
    assert main(["experiment", "run", "E1", "--n", "5"]) == 0
    assert (tmp_path / "E1").is_dir()


def test_sweep(tmp_path, capsys):
    assert main(["sweep", "--grid", "0.3,0.6", "--n", "10", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0].startswith("| p_fail |")
    assert main(["sweep", "--grid", "1.5"]) == 2


@pytest.fixture
def bad_pkg(tmp_path):
    data = builtin_manifest("dumpling").to_dict()
    for s in data["skills"]:
        if s["name"] == "dumpling.wrap":
            s["on_failure"] = "dumpling.nonexistent"
    return write_package(Manifest.from_dict(data), tmp_path / "pkgs")


def test_validate_dangling_on_failure(bad_pkg, capsys):
    assert main(["ecm", "validate", str(bad_pkg)]) == 1
    assert "[interface]" in capsys.readouterr().out


def test_validate_good_package(tmp_path, capsys):
    path = write_package(builtin_manifest("clean_table"), tmp_path)
    assert main(["ecm", "validate", str(path)]) == 0


def test_install_and_swap_persist(tmp_path, bad_pkg, capsys):
    reg = tmp_path / "reg"
    dumpling = write_package(builtin_manifest("dumpling"), tmp_path / "pkgs")
    clean = write_package(builtin_manifest("clean_table"), tmp_path / "pkgs")
    assert main(["ecm", "install", str(dumpling), "--registry", str(reg)]) == 0
    # a second install of the same package is an illegal transition
    assert main(["ecm", "install", str(dumpling), "--registry", str(reg)]) == 1
    assert main(["ecm", "swap", str(clean), "--registry", str(reg)]) == 0
    state = json.loads((reg / "registry.json").read_text())
    assert {p["manifest"]["name"]: p["state"] for p in state["packages"]} == {
        "make_dumplings": "Installed", "clean_table": "Active"}
    before = (reg / "registry.json").read_text()
    assert main(["ecm", "swap", str(bad_pkg), "--registry", str(reg)]) == 1
    assert (reg / "registry.json").read_text() == before


def test_install_needs_registry(tmp_path, capsys):
    path = write_package(builtin_manifest("clean_table"), tmp_path)
    assert main(["ecm", "install", str(path)]) == 2


def test_missing_manifest_is_domain_error(tmp_path, capsys):
    assert main(["ecm", "validate", str(tmp_path / "nope")]) == 1


def test_audit_show_filters(tmp_path, capsys):
    log = tmp_path / "audit.log"
    records = [
        {"seq": 0, "verdict": "block", "reason": "ActuatorDenied", "package": "a",
         "request": {"skill": "a.x"}},
        {"seq": 1, "verdict": "allow", "reason": None, "package": "b", "request": {"skill": "b.y"}},
        {"seq": 2, "verdict": "block", "reason": "RiskExceeded", "package": "b",
         "request": {"skill": "b.y"}},
    ]
    log.write_text("".join(json.dumps(r) + "\n" for r in records))
    before = log.read_text()
    assert main(["audit", "show", str(log), "--verdict", "block", "--package", "b"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert [json.loads(line)["seq"] for line in lines] == [2]
    assert main(["audit", "show", str(log), "--skill", "b.y"]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 2
    assert log.read_text() == before


def test_audit_show_malformed(tmp_path, capsys):
    log = tmp_path / "audit.log"
    log.write_text("{not json\n")
    assert main(["audit", "show", str(log)]) == 1
