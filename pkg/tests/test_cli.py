import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from daedisc.cli import main

TRUE_SWING = ("ddelta/dt = p0*(omega - 1)\n"
              "domega/dt = (p1 - p2*sin(delta) - p3*(omega - 1))/p4")


def fenced(text):
    return f"```equations\n{text}\n```"


SCENARIOS = {
    # train: a severe cleared-fault analog (strong nonlinearity for
    # identifiability); test: a milder kick at the same operating point
    "train": {
        "total_time": 10.0, "dt": 0.01, "noise_sigma": 0.0, "seed": 1,
        "disturbance": {"kind": "state_kick", "magnitude": 1.0,
                        "offsets": {"delta": 1.2, "omega": 0.004}},
    },
    "test": {
        "total_time": 10.0, "dt": 0.01, "noise_sigma": 0.0, "seed": 2,
        "disturbance": {"kind": "state_kick", "magnitude": 1.0,
                        "offsets": {"delta": 0.4, "omega": -0.002}},
    },
}

RUN_CONFIG = {
    "benchmark": "swing2",
    "seed": 5,
    "islands": 3,
    "n_b": 2,
    "de_max_iterations": 10,
    "ae_max_iterations": 5,
    "fit": {"steps": 2000, "learning_rate": 1.5, "restarts": 2, "seed": 0},
    "generator": {"kind": "mock", "script": "script.json"},
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """gen-data + discover once; downstream commands reuse the artifacts."""
    root = tmp_path_factory.mktemp("cli")
    runner = CliRunner()
    (root / "scen.json").write_text(json.dumps(SCENARIOS))
    result = runner.invoke(main, ["gen-data", "--model", "swing2",
                                  "--scenario", str(root / "scen.json"),
                                  "--out", str(root / "data")])
    assert result.exit_code == 0, result.output
    script = [[fenced("ddelta/dt = p0*delta\ndomega/dt = p1*omega")],
              [fenced(TRUE_SWING)]]
    (root / "script.json").write_text(json.dumps(script))
    (root / "run.json").write_text(json.dumps(RUN_CONFIG))
    result = runner.invoke(main, ["discover", "--config", str(root / "run.json"),
                                  "--data", str(root / "data"),
                                  "--out", str(root / "run_discover")])
    assert result.exit_code == 0, result.output
    for variant in ("accurate", "overcomplete", "missing"):
        result = runner.invoke(main, ["baseline", "--variant", variant,
                                      "--data", str(root / "data"),
                                      "--out", str(root / f"run_{variant}")])
        assert result.exit_code == 0, result.output
    return root


def test_gen_data_outputs(workspace):
    data = workspace / "data"
    for split in ("train", "test"):
        assert (data / f"{split}.csv").exists()
        assert (data / f"{split}.full.csv").exists()
        assert (data / f"{split}.meta.json").exists()
    header = (data / "train.csv").read_text().splitlines()[0]
    assert header == "t,delta,omega,ddelta_dt,domega_dt"


def test_discover_outputs(workspace):
    out = workspace / "run_discover"
    assert (out / "model.json").exists()
    assert (out / "archive_de.json").exists()
    doc = json.loads((out / "model.json").read_text())
    assert doc["format"] == "daedisc-model"
    assert doc["de"]["text"] == TRUE_SWING.replace("(omega-1)", "(omega - 1)")
    assert doc["de"]["terminated"] is True
    assert "skipped" in doc["ae"]
    log_lines = (out / "run_log.jsonl").read_text().splitlines()
    records = [json.loads(line) for line in log_lines]
    assert records[0]["event"] == "seed"
    assert any(r["event"] == "terminate" for r in records)


def test_evaluate_true_model_self_consistency(workspace, tmp_path):
    # a hand-written model file carrying the exact benchmark equations
    from daedisc.benchmarks import get_model

    model = get_model("swing2")
    p = model.params
    doc = {
        "format": "daedisc-model",
        "version": 1,
        "benchmark": "swing2",
        "de": {
            "targets": ["delta", "omega"],
            "text": TRUE_SWING.replace("(omega-1)", "(omega - 1)"),
            "params": [p["omega_b"], model.default_inputs["P_m"],
                       p["e_prime"] * p["v_bus"] / p["x_total"],
                       p["damping"], 2.0 * p["inertia"]],
            "score": 0.0,
        },
        "ae": {"skipped": "true model fixture"},
        "library": [],
    }
    model_path = tmp_path / "true_model.json"
    model_path.write_text(json.dumps(doc))
    report_path = tmp_path / "report.json"
    runner = CliRunner()
    result = runner.invoke(main, ["evaluate", "--model", str(model_path),
                                  "--data", str(workspace / "data"),
                                  "--out", str(report_path)])
    assert result.exit_code == 0, result.output
    report = json.loads(report_path.read_text())
    assert report["aggregate"]["mape_pct"] < 0.1
    assert not report["diverged"]


def test_evaluate_discovered_model(workspace):
    runner = CliRunner()
    out = workspace / "run_discover"
    result = runner.invoke(main, ["evaluate", "--model", str(out / "model.json"),
                                  "--data", str(workspace / "data"),
                                  "--out", str(out / "report.json")])
    assert result.exit_code == 0, result.output
    report = json.loads((out / "report.json").read_text())
    assert report["aggregate"]["mape_pct"] < 1.0
    assert report["aggregate"]["r2"] > 0.95


def test_baseline_three_variants(workspace):
    for variant in ("accurate", "overcomplete", "missing"):
        doc = json.loads((workspace / f"run_{variant}" / "model.json").read_text())
        assert doc["format"] == "daedisc-sindy"
        assert doc["variant"] == variant
    missing = json.loads((workspace / "run_missing" / "model.json").read_text())
    assert "P_e" not in missing["feature_names"]


def test_report_merges_four_runs(workspace, tmp_path):
    runner = CliRunner()
    # evaluate the three baseline variants so four runs carry reports
    run_dirs = [workspace / "run_discover"]
    for variant in ("accurate", "overcomplete", "missing"):
        run_dir = workspace / f"run_{variant}"
        result = runner.invoke(main, [
            "evaluate", "--model", str(run_dir / "model.json"),
            "--data", str(workspace / "data"),
            "--out", str(run_dir / "report.json")])
        assert result.exit_code == 0, result.output
        run_dirs.append(run_dir)
    out_path = tmp_path / "comparison.json"
    args = ["report", "--out", str(out_path)] + [str(d) for d in run_dirs]
    result = runner.invoke(main, args)
    assert result.exit_code == 0, result.output
    lines = result.output.strip().splitlines()
    assert lines[0].startswith("Model")
    assert len(lines) == 5  # header + one row per run
    merged = json.loads(out_path.read_text())
    assert set(merged["runs"]) == {"run_discover", "run_accurate",
                                   "run_overcomplete", "run_missing"}
    # byte-identical on repeat
    result2 = runner.invoke(main, args)
    assert result2.output == result.output


def test_failure_emits_error_json(tmp_path):
    runner = CliRunner()
    result = runner.invoke(main, ["evaluate", "--model", str(tmp_path / "x.json"),
                                  "--data", str(tmp_path), "--out",
                                  str(tmp_path / "r.json")])
    assert result.exit_code != 0
    # missing model file is caught by click's existence check; a missing
    # dataset must produce the JSON envelope
    (tmp_path / "m.json").write_text("{}")
    result = runner.invoke(main, ["evaluate", "--model", str(tmp_path / "m.json"),
                                  "--data", str(tmp_path), "--out",
                                  str(tmp_path / "r.json")])
    assert result.exit_code == 1
    err = json.loads(result.output.strip().splitlines()[-1])
    assert "error" in err and "message" in err["error"]


def test_discover_benchmark_mismatch_fails(workspace, tmp_path):
    cfg = dict(RUN_CONFIG)
    cfg["benchmark"] = "oneaxis3"
    cfg["generator"] = {"kind": "mock", "script": str(workspace / "script.json")}
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(cfg))
    runner = CliRunner()
    result = runner.invoke(main, ["discover", "--config", str(bad),
                                  "--data", str(workspace / "data"),
                                  "--out", str(tmp_path / "out")])
    assert result.exit_code == 1
    err = json.loads(result.output.strip().splitlines()[-1])
    assert "does not match dataset" in err["error"]["message"]
