from __future__ import annotations

import json
import os

import numpy as np
import pytest

from viscofem.cli import (ConfigError, PRESETS, SCENARIO_SCHEMA, build_scenario,
                          load_config, main)


def write_config(tmp_path, data, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


TINY_SCENARIO = {
    "mesh": {"lower": [-1, -1, -1], "upper": [1, 1, 1], "divisions": [2, 2, 2]},
    "material": {"mu": 1.0e3, "lambda": 1.5e3, "c": 3.0e3},
    "initial_condition": "identity",
    "tau": 0.01,
    "T": 0.05,
}


def test_presets_are_schema_valid(tmp_path):
    for name in PRESETS:
        cfg = load_config(write_config(tmp_path, {"preset": name}, f"{name}.json"),
                          SCENARIO_SCHEMA)
        scenario = build_scenario(cfg)
        assert scenario.step_count() >= 1


def test_malformed_config_rejected(tmp_path, capsys):
    bad = dict(TINY_SCENARIO)
    del bad["material"]
    bad["tau"] = -0.5
    out = tmp_path / "out"
    rc = main(["simulate", "--config", write_config(tmp_path, bad),
               "--output-dir", str(out)])
    captured = capsys.readouterr()
    assert rc == 2
    assert "material" in captured.err
    assert "tau" in captured.err
    assert not out.exists()  # no partial artifacts


def test_unreadable_config_rejected(tmp_path, capsys):
    rc = main(["simulate", "--config", str(tmp_path / "missing.json")])
    assert rc == 2
    assert "cannot read" in capsys.readouterr().err


def test_unknown_preset_rejected(tmp_path, capsys):
    rc = main(["simulate", "--config",
               write_config(tmp_path, {"preset": "pudding"})])
    assert rc == 2
    assert "preset" in capsys.readouterr().err


def test_bad_dirichlet_tag_fails_before_artifacts(tmp_path, capsys):
    cfg = dict(TINY_SCENARIO)
    cfg["loads"] = {"dirichlet": {"lid": "reference"}}
    out = tmp_path / "out"
    rc = main(["simulate", "--config", write_config(tmp_path, cfg),
               "--output-dir", str(out)])
    assert rc != 0
    assert not out.exists()


def test_simulate_identity_writes_zero_ledger(tmp_path, capsys):
    out = tmp_path / "out"
    rc = main(["simulate", "--config", write_config(tmp_path, TINY_SCENARIO),
               "--output-dir", str(out)])
    assert rc == 0
    ledger = (out / "ledger.csv").read_text().strip().split("\n")
    assert len(ledger) == 1 + 5
    for line in ledger[1:]:
        vals = [float(v) for v in line.split(",")[2:]]
        assert all(abs(v) <= 1e-10 for v in vals)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["final_elastic_energy"] <= 1e-12
    assert summary["cumulative_dissipation_quad"] == 0.0


def test_summary_totals_match_csv_sums(tmp_path):
    cfg = dict(TINY_SCENARIO)
    cfg["initial_condition"] = {"affine": [[1.1, 0, 0], [0, 1, 0], [0, 0, 1]]}
    cfg["T"] = 0.1
    out = tmp_path / "out"
    rc = main(["simulate", "--config", write_config(tmp_path, cfg),
               "--output-dir", str(out)])
    assert rc == 0
    rows = (out / "ledger.csv").read_text().strip().split("\n")[1:]
    inc_sum = sum(float(r.split(",")[4]) for r in rows)
    summary = json.loads((out / "summary.json").read_text())
    total = summary["cumulative_dissipation_quad"]
    assert abs(inc_sum - total) <= 1e-12 * max(1.0, abs(total))
    assert summary["final_elastic_energy"] == float(rows[-1].split(",")[2])


def test_serial_reruns_byte_identical(tmp_path):
    cfg = dict(TINY_SCENARIO)
    cfg["initial_condition"] = "uniaxial"
    path = write_config(tmp_path, cfg)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--config", path, "--output-dir", str(out_a)]) == 0
    assert main(["simulate", "--config", path, "--output-dir", str(out_b)]) == 0
    assert (out_a / "ledger.csv").read_bytes() == (out_b / "ledger.csv").read_bytes()


def test_convergence_driver_single_tau_reports_undefined_slope(tmp_path, capsys):
    cfg = {
        "mesh": {"lower": [-1, -1, -1], "upper": [1, 1, 1], "divisions": [2, 2, 2]},
        "taus": [0.05],
        "T": 0.1,
    }
    out = tmp_path / "out"
    rc = main(["convergence", "--config", write_config(tmp_path, cfg),
               "--output-dir", str(out)])
    assert rc == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["slope"] is None
    report = (out / "convergence.csv").read_text().strip().split("\n")
    assert report[0] == "mesh,tau,e_quadratic,e_printed"
    assert len(report) == 2


def test_convergence_driver_two_taus(tmp_path):
    cfg = {
        "mesh": {"lower": [-1, -1, -1], "upper": [1, 1, 1], "divisions": [2, 2, 2]},
        "taus": [0.1, 0.01],
        "T": 0.2,
    }
    out = tmp_path / "out"
    rc = main(["convergence", "--config", write_config(tmp_path, cfg),
               "--output-dir", str(out)])
    assert rc == 0
    summary = json.loads((out / "summary.json").read_text())
    assert 0.5 < summary["slope"] < 1.5


def test_oracle_compare_self_is_zero(tmp_path):
    cfg = {
        "taus": [0.05, 0.025],
        "T": 0.1,
        "schemes": ["linearized_explicit", "linearized_explicit"],
    }
    out = tmp_path / "out"
    rc = main(["oracle-compare", "--config", write_config(tmp_path, cfg),
               "--output-dir", str(out)])
    assert rc == 0
    rows = (out / "oracle_compare.csv").read_text().strip().split("\n")
    assert rows[0] == "tau,scheme_a,scheme_b,linf_deviation,l2_deviation"
    for row in rows[1:]:
        parts = row.split(",")
        assert float(parts[3]) == 0.0
        assert float(parts[4]) == 0.0


def test_oracle_compare_two_schemes(tmp_path):
    cfg = {"taus": [0.05, 0.025], "T": 0.1}
    out = tmp_path / "out"
    rc = main(["oracle-compare", "--config", write_config(tmp_path, cfg),
               "--output-dir", str(out)])
    assert rc == 0
    rows = (out / "oracle_compare.csv").read_text().strip().split("\n")[1:]
    devs = [float(r.split(",")[3]) for r in rows]
    assert all(d > 0 for d in devs)
    assert devs[1] < devs[0]


def test_threads_flag_accepted(tmp_path):
    cfg = {
        "mesh": {"lower": [-1, -1, -1], "upper": [1, 1, 1], "divisions": [2, 2, 2]},
        "taus": [0.1, 0.05],
        "T": 0.1,
    }
    rc = main(["convergence", "--config", write_config(tmp_path, cfg),
               "--output-dir", str(tmp_path / "out"), "--threads", "2"])
    assert rc == 0


def test_load_config_reports_paths(tmp_path):
    bad = {"mesh": {"lower": [0, 0], "upper": [1, 1, 1], "divisions": [1, 1, 1]},
           "material": {"mu": 1.0, "lambda": 0.0, "c": 1.0}, "tau": 0.1, "T": 1.0}
    with pytest.raises(ConfigError) as err:
        load_config(write_config(tmp_path, bad), SCENARIO_SCHEMA)
    assert any("mesh" in p and "lower" in p for p in err.value.problems)
