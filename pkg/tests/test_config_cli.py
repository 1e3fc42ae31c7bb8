import json
from pathlib import Path

import pytest

from qebsdej.cli import main
from qebsdej.config import ConfigError, load_config, validate_config
from qebsdej.runner import (EXIT_CHECK_FAILURE, EXIT_CONFIG_ERROR, EXIT_OK)


def write_config(tmp_path: Path, name: str, payload: dict) -> str:
    path = tmp_path / name
    path.write_text(json.dumps(payload, indent=1))
    return str(path)


def solve_payload(**overrides):
    payload = {
        "experiment": "solve",
        "model": {"name": "gamma", "theta": 1.0, "beta": 1.0},
        "driver": {"name": "zero"},
        "structure": {"delta": 1.0},
        "grid": {"t_end": 1.0, "k_steps": 8},
        "quadrature": {"kappa": 4.0, "q_nodes": 6},
        "ensemble": {"n_paths": 2000, "seed": 11, "dynamics": "brownian"},
        "terminal": {"name": "linear", "scale": 1.0},
    }
    payload.update(overrides)
    return payload


# ---------------------------------------------------------------------------
# configuration validation
# ---------------------------------------------------------------------------

def test_missing_file_reported():
    with pytest.raises(ConfigError, match="not found"):
        load_config("/nonexistent/config.json")


def test_invalid_json_reports_position(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{"experiment": "solve",\n  "grid": }')
    with pytest.raises(ConfigError, match="line 2"):
        load_config(path)


def test_missing_seed_rejected(tmp_path):
    payload = solve_payload()
    del payload["ensemble"]["seed"]
    with pytest.raises(ConfigError, match="ensemble.seed"):
        load_config(write_config(tmp_path, "x.json", payload))


def test_small_ensemble_rejected():
    payload = solve_payload()
    payload["ensemble"]["n_paths"] = 50
    with pytest.raises(ConfigError, match="n_paths"):
        validate_config(payload)


def test_unknown_names_rejected():
    with pytest.raises(ConfigError, match="experiment"):
        validate_config(solve_payload(experiment="explore"))
    with pytest.raises(ConfigError, match="model.name"):
        validate_config(solve_payload(model={"name": "vol"}))
    with pytest.raises(ConfigError, match="driver.name"):
        validate_config(solve_payload(driver={"name": "mystery"}))
    with pytest.raises(ConfigError, match="dynamics"):
        validate_config(solve_payload(
            ensemble={"n_paths": 2000, "seed": 1, "dynamics": "garch"}))


def test_scheme_requires_triples():
    payload = solve_payload(experiment="scheme")
    with pytest.raises(ConfigError, match="schedule.triples"):
        validate_config(payload)


def test_grid_validation():
    payload = solve_payload(grid={"t_end": 1.0, "k_steps": 1})
    with pytest.raises(ConfigError, match="k_steps"):
        validate_config(payload)


# ---------------------------------------------------------------------------
# CLI verbs and exit codes
# ---------------------------------------------------------------------------

def test_validate_verb(tmp_path):
    cfg = write_config(tmp_path, "ok.json", solve_payload())
    assert main(["validate", cfg]) == EXIT_OK


def test_run_solve_and_artifacts(tmp_path):
    cfg = write_config(tmp_path, "run.json", solve_payload())
    out = tmp_path / "out"
    assert main(["run", cfg, "--out", str(out)]) == EXIT_OK
    summary = (out / "summary.txt").read_text()
    assert "OVERALL PASS" in summary
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["package"] == "qebsdej"
    assert "config_sha256" in manifest
    assert (out / "solution_summary.csv").exists()
    assert (out / "solution_paths.csv").exists()


def test_run_is_bit_deterministic(tmp_path):
    cfg = write_config(tmp_path, "det.json", solve_payload())
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["run", cfg, "--out", str(out1)]) == EXIT_OK
    assert main(["run", cfg, "--out", str(out2)]) == EXIT_OK
    for name in ("solution_summary.csv", "solution_paths.csv", "summary.txt"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_config_error_exit_code(tmp_path):
    payload = solve_payload()
    del payload["ensemble"]["seed"]
    cfg = write_config(tmp_path, "bad.json", payload)
    out = tmp_path / "nothing"
    assert main(["run", cfg, "--out", str(out)]) == EXIT_CONFIG_ERROR
    assert not out.exists()  # no artifacts on config failure


def test_oracle_verb(tmp_path):
    cfg = write_config(tmp_path, "oracle.json", {
        "experiment": "oracle",
        "oracle": {"name": "huber_envelope", "n": 2.0, "y": 3.0},
    })
    out = tmp_path / "oracle_out"
    assert main(["oracle", cfg, "--out", str(out)]) == EXIT_OK
    rows = (out / "oracle_values.csv").read_text().splitlines()
    assert rows[0] == "name,value,stderr"
    assert rows[1].startswith("huber_envelope,5")


def test_unknown_oracle_rejected(tmp_path):
    cfg = write_config(tmp_path, "noracle.json", {
        "experiment": "oracle", "oracle": {"name": "prophecy"},
    })
    assert main(["oracle", cfg, "--out", str(tmp_path / "o")]) == EXIT_CONFIG_ERROR


def test_oracle_verb_requires_oracle_experiment(tmp_path):
    cfg = write_config(tmp_path, "mix.json", solve_payload())
    assert main(["oracle", cfg, "--out", str(tmp_path / "o")]) == EXIT_CONFIG_ERROR


def test_run_gaussian_entropic_oracle(tmp_path):
    cfg = write_config(tmp_path, "goracle.json", {
        "experiment": "oracle",
        "oracle": {"name": "entropic_gaussian", "sigma": 1.0,
                   "n_samples": 100000, "seed": 5},
    })
    out = tmp_path / "gout"
    assert main(["oracle", cfg, "--out", str(out)]) == EXIT_OK
    _, row = (out / "oracle_values.csv").read_text().splitlines()
    _, value, stderr = row.split(",")
    assert abs(float(value) - 0.5) <= 3.0 * float(stderr)


def test_null_measure_oracle(tmp_path):
    cfg = write_config(tmp_path, "null.json", {
        "experiment": "oracle", "oracle": {"name": "null_measure"},
    })
    out = tmp_path / "nout"
    assert main(["oracle", cfg, "--out", str(out)]) == EXIT_OK
    assert "null_measure,0,0" in (out / "oracle_values.csv").read_text()


def test_jump_table_export(tmp_path):
    payload = solve_payload()
    payload["ensemble"] = {"n_paths": 4000, "seed": 4,
                           "dynamics": "brownian_jumps"}
    payload["solver"] = {"export_jumps": True, "export_paths": 5}
    cfg = write_config(tmp_path, "jumps.json", payload)
    out = tmp_path / "jout"
    assert main(["run", cfg, "--out", str(out)]) == EXIT_OK
    header, *rows = (out / "jump_table.csv").read_text().splitlines()
    assert header == "path_id,interval_index,jump_time,mark_index"
    assert rows  # the gamma measure jumps with positive probability
    manifest = json.loads((out / "manifest.json").read_text())
    assert "jump_table.csv" in manifest["artifacts"]


def test_run_risk_experiment(tmp_path):
    payload = solve_payload(experiment="risk")
    payload["risk"] = {"times": [0, 4], "gammas": [1.0]}
    payload["terminal"] = {"name": "linear", "scale": 0.5}
    cfg = write_config(tmp_path, "risk.json", payload)
    out = tmp_path / "risk_out"
    assert main(["run", cfg, "--out", str(out)]) == EXIT_OK
    table = (out / "risk_table.csv").read_text().splitlines()
    assert table[0] == "t,direction,value,stderr,heavy_tail"
    assert len(table) == 5  # two times, both directions


def test_run_audit_experiment(tmp_path):
    payload = solve_payload(experiment="audit")
    payload["driver"] = {"name": "canonical"}
    payload["ensemble"] = {"n_paths": 4000, "seed": 3,
                           "dynamics": "brownian_jumps"}
    payload["terminal"] = {"name": "abs_linear", "scale": 0.25}
    cfg = write_config(tmp_path, "audit.json", payload)
    out = tmp_path / "audit_out"
    assert main(["run", cfg, "--out", str(out)]) == EXIT_OK
    assert "corridor" in (out / "summary.txt").read_text()


def test_run_scheme_experiment(tmp_path):
    payload = solve_payload(experiment="scheme")
    payload["driver"] = {"name": "canonical"}
    payload["schedule"] = {"triples": [[2, 2, 2], [4, 4, 4]]}
    payload["ensemble"] = {"n_paths": 3000, "seed": 8,
                           "dynamics": "brownian_jumps"}
    payload["grid"] = {"t_end": 1.0, "k_steps": 12}
    payload["terminal"] = {"name": "abs_linear", "scale": 0.25}
    cfg = write_config(tmp_path, "scheme.json", payload)
    out = tmp_path / "scheme_out"
    assert main(["run", cfg, "--out", str(out)]) == EXIT_OK
    report = (out / "convergence_report.csv").read_text().splitlines()
    assert len(report) == 3  # header plus one row per triple
    assert report[0].startswith("n,m,kappa,y0")


def test_check_failure_exit_code(tmp_path, monkeypatch):
    # force a failing check by auditing a generator outside its corridor
    import qebsdej.runner as runner

    def failing_checks(cfg, out_dir):
        return [runner.CheckResult("designed_to_fail", False, 1.0, 0.0)], []

    monkeypatch.setitem(runner._RUNNERS, "solve", failing_checks)
    cfg = write_config(tmp_path, "fail.json", solve_payload())
    assert main(["run", cfg, "--out", str(tmp_path / "f")]) == EXIT_CHECK_FAILURE
