import csv
import json

import pytest

from brwlab import cli, experiments as ex


def _write(tmp_path, text):
    p = tmp_path / "run.yaml"
    p.write_text(text)
    return str(p)


def test_validate_model_ok(tmp_out):
    assert cli.main(["validate-model", "--replications", "20000", "--output-dir", tmp_out]) == 0
    rows = list(csv.DictReader(open(f"{tmp_out}/validate-model.csv")))
    assert {r["quantity"] for r in rows} >= {"exp", "vexp", "sigma_sq"}
    d = json.load(open(f"{tmp_out}/validate-model.json"))
    assert d["status"] == "ok" and d["seed"] == 42 and d["schema_version"] == ex.SCHEMA_VERSION


def test_failed_check_exits_1(tmp_path, tmp_out):
    cfg = _write(tmp_path, "model:\n  name: one_child\n  parameters:\n    value: '1'\n")
    assert cli.main(["validate-model", "--config", cfg, "--replications", "20000", "--output-dir", tmp_out]) == 1
    assert json.load(open(f"{tmp_out}/validate-model.json"))["status"] == "failed"


def test_missing_config_exits_2(tmp_out, capsys):
    assert cli.main(["tail-kill", "--config", "/no/such.yaml", "--output-dir", tmp_out]) == 2
    assert "not found" in capsys.readouterr().err


def test_unknown_key_reports_line(tmp_path, tmp_out, capsys):
    cfg = _write(tmp_path, "model:\n  name: binary_gaussian\nexperiment:\n  nn: 3\n")
    assert cli.main(["tail-kill", "--config", cfg, "--output-dir", tmp_out]) == 2
    assert f"{cfg}:4:" in capsys.readouterr().err


def test_invalid_argument_exits_2(tmp_out):
    assert cli.main(["tail-kill", "--z-grid", "0", "--replications", "10", "--output-dir", tmp_out]) == 2
    assert cli.main(["tail-kill", "--n", "0", "--output-dir", tmp_out]) == 2


def test_population_cap_exits_1(tmp_path, tmp_out):
    cfg = _write(tmp_path, "model:\n  name: binary_gaussian\nexecution:\n  memory_cap: 100\n")
    assert cli.main(["simulate", "--config", cfg, "--n", "10", "--replications", "50", "--output-dir", tmp_out]) == 1
    assert json.load(open(f"{tmp_out}/simulate.json"))["status"] == "capped"


def test_interrupt_exits_130(monkeypatch, tmp_out):
    def boom(*a, **k):
        raise KeyboardInterrupt
    monkeypatch.setattr(ex, "exp_killed_tail", boom)
    assert cli.main(["tail-kill", "--output-dir", tmp_out]) == 130
    d = json.load(open(f"{tmp_out}/tail-kill.partial.json"))
    assert d["status"] == "partial"


def test_tail_kill_outputs(tmp_out):
    assert cli.main(["tail-kill", "--n", "10", "--z-grid", "0.5,1,6", "--replications", "3000",
                     "--output-dir", tmp_out]) == 0
    rows = list(csv.DictReader(open(f"{tmp_out}/tail-kill.csv")))
    assert list(rows[0]) == ["axis", "coord", *ex.CSV_COLUMNS]
    zero = [r for r in rows if r["coord"] == "6" and r["quantity"] == "P_kill"]
    assert zero[0]["estimate"] == "0" and zero[0]["estimator_kind"] == "exact"


@pytest.mark.parametrize("cmd, extra", [
    ("rw-constants", ["--replications", "5000"]),
    ("simulate", ["--n", "5", "--replications", "50"]),
    ("limit-law", ["--n", "8", "--replications", "300", "--x-grid=-1,0,1"]),
    ("decompose", ["--n", "6", "--z", "2", "--replications", "200"]),
])
def test_other_commands_run(cmd, extra, tmp_path, tmp_out):
    cfg = _write(tmp_path, "model:\n  name: binary_gaussian\nexperiment:\n  ladder_budget: 5000\n"
                 if cmd in ("simulate", "decompose") else "model:\n  name: binary_gaussian\n")
    assert cli.main([cmd, "--config", cfg, *extra, "--output-dir", tmp_out]) == 0
    assert json.load(open(f"{tmp_out}/{cmd}.json"))["status"] == "ok"


def test_tail_full_with_given_constants(tmp_path, tmp_out):
    cfg = _write(tmp_path, "model:\n  name: binary_gaussian\nexperiment:\n  C1: 0.48\n  c0: 1.2011\n"
                 "  ladder_budget: 5000\n")
    assert cli.main(["tail-full", "--config", cfg, "--n", "8", "--z-grid", "1,2", "--replications", "500",
                     "--output-dir", tmp_out]) == 0
    rows = list(csv.DictReader(open(f"{tmp_out}/tail-full.csv")))
    assert any(r["quantity"] == "ratio_to_C1_c0" for r in rows)


def test_seed_changes_output(tmp_path):
    outs = []
    for seed in ("1", "2"):
        d = tmp_path / seed
        cli.main(["tail-kill", "--n", "8", "--z-grid", "1", "--replications", "2000", "--seed", seed,
                  "--output-dir", str(d)])
        outs.append((d / "tail-kill.csv").read_text())
    assert outs[0] != outs[1]
