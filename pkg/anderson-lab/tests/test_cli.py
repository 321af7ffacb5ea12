import csv
import json
import math
import os

import pytest
from click.testing import CliRunner

from cli import cli
from manifest_storage import ExperimentManifest, load_manifest


def _documents(text):
    """Every JSON document echoed on stdout, in order."""
    decoder = json.JSONDecoder()
    docs, pos = [], 0
    text = text.strip()
    while pos < len(text):
        doc, end = decoder.raw_decode(text, pos)
        docs.append(doc)
        pos = end
        while pos < len(text) and text[pos].isspace():
            pos += 1
    return docs


@pytest.fixture
def invoke(tmp_path):
    runner = CliRunner()
    out = str(tmp_path / "runs")

    def run(*args):
        return runner.invoke(cli, ["--output-dir", out, *args])

    run.output_dir = out
    return run


def _manifest_path(invoke, run_id):
    return os.path.join(invoke.output_dir, f"{run_id}.json")


def test_ppp_sample_writes_cloud_and_manifest(invoke):
    result = invoke("ppp-sample", "--region", "ball:3", "--intensity", "2", "--seed", "7")
    assert result.exit_code == 0, result.output
    echoed = _documents(result.stdout)[-1]
    assert echoed["ok"]
    assert os.path.exists(os.path.join(echoed["run_dir"], "cloud.csv"))
    manifest = load_manifest(_manifest_path(invoke, echoed["run_id"]))
    assert manifest.command == "ppp-sample"
    assert manifest.seeds == [7]
    assert set(manifest.outputs) == {"cloud.csv"}


def test_same_seed_same_digest(invoke):
    first = _documents(invoke("ppp-sample", "--region", "box:2", "--seed", "1").stdout)[-1]
    second = _documents(invoke("ppp-sample", "--region", "box:2", "--seed", "1").stdout)[-1]
    a = load_manifest(_manifest_path(invoke, first["run_id"]))
    b = load_manifest(_manifest_path(invoke, second["run_id"]))
    assert a.outputs == b.outputs


def test_missing_required_option_is_usage_error(invoke):
    assert invoke("ppp-sample", "--region", "ball:1").exit_code == 1


def test_invalid_region_is_input_error(invoke):
    result = invoke("ppp-sample", "--region", "ball:-1", "--seed", "1")
    assert result.exit_code == 1
    assert "Error" in result.stderr


def test_missing_config_file_is_usage_error(tmp_path):
    result = CliRunner().invoke(cli, ["--config", str(tmp_path / "missing.conf"), "constants", "--d", "3",
                                      "--theta", "0.0625"])
    assert result.exit_code == 1


def test_potential_eval(invoke, cloud_file):
    result = invoke("potential-eval", "--cloud", cloud_file, "--kernel", "truncated:a=1", "--at", "0,0,0")
    assert result.exit_code == 0, result.output
    assert _documents(result.stdout)[-1]["summary"]["values"] == [pytest.approx(8.0)]


def test_potential_eval_on_pole(invoke, cloud_file):
    result = invoke("potential-eval", "--cloud", cloud_file, "--kernel", "truncated:a=1", "--at", "0.5,0,0")
    assert result.exit_code == 1


def test_geometry(invoke, cloud_file):
    result = invoke("geometry", "--cloud", cloud_file, "--r", "1.5", "--covering", "box:1")
    assert result.exit_code == 0, result.output
    summary = _documents(result.stdout)[-1]["summary"]
    assert summary["N_r"] == 2
    assert summary["components"] == 2


def test_constants(invoke):
    result = invoke("constants", "--d", "3", "--theta", "0.0625", "--t", "1e6")
    assert result.exit_code == 0, result.output
    summary = _documents(result.stdout)[-1]["summary"]
    assert summary["k"] == 2
    assert summary["scales"]["R"] * summary["scales"]["r"] == pytest.approx(1e6)


def test_eigen_on_empty_ball(invoke):
    result = invoke("eigen", "--theta", "0.0625", "--h", "0.125")
    assert result.exit_code == 0, result.output
    value = _documents(result.stdout)[-1]["summary"]["lambda"]
    assert value == pytest.approx(-math.pi ** 2 / 2, rel=0.25)


def test_fk_without_poles(invoke):
    result = invoke("fk", "--theta", "0.1", "--t", "0.1", "--seed", "2", "--paths", "100")
    assert result.exit_code == 0, result.output
    assert _documents(result.stdout)[-1]["summary"]["mean"] == 1.0


def test_json_logging(invoke):
    result = invoke("--log-format", "json", "constants", "--d", "3", "--theta", "0.0625")
    assert result.exit_code == 0, result.output


def test_suite_subset(invoke):
    result = invoke("suite", "--seed", "0", "--only", "constants")
    assert result.exit_code == 0, result.output
    echoed = _documents(result.stdout)[-1]
    assert echoed["summary"]["counts"]["passed"] == 1
    assert os.path.exists(os.path.join(echoed["run_dir"], "suite.json"))


def test_replay_reproduces_outputs(invoke):
    original = _documents(invoke("ppp-sample", "--region", "ball:2", "--seed", "5").stdout)[-1]
    result = invoke("replay", "--manifest", _manifest_path(invoke, original["run_id"]))
    assert result.exit_code == 0, result.output
    verdict = _documents(result.stdout)[-1]
    assert verdict["replayed"] == "ppp-sample"
    assert verdict["identical"]


def test_replay_detects_changed_digest(invoke, tmp_path):
    original = _documents(invoke("ppp-sample", "--region", "ball:2", "--seed", "5").stdout)[-1]
    manifest = load_manifest(_manifest_path(invoke, original["run_id"]))
    tampered = ExperimentManifest.from_dict(manifest.to_dict())
    tampered.outputs["cloud.csv"] = "0" * 64
    path = tmp_path / "tampered.json"
    path.write_text(json.dumps(tampered.to_dict()))
    result = invoke("replay", "--manifest", str(path))
    assert result.exit_code == 2
    assert _documents(result.stdout)[-1]["mismatched"] == ["cloud.csv"]


def test_replay_unknown_command(invoke, tmp_path):
    path = tmp_path / "unknown.json"
    path.write_text(json.dumps(ExperimentManifest("dance", {}, [], {}).to_dict()))
    assert invoke("replay", "--manifest", str(path)).exit_code == 1


def test_ppp_sample_writes_to_out(invoke, tmp_path):
    out = tmp_path / "plane.csv"
    result = invoke("ppp-sample", "--dim", "2", "--region", "box:1", "--seed", "3", "--out", str(out))
    assert result.exit_code == 0, result.output
    assert out.read_text().splitlines()[0] == "# dim=2"


@pytest.mark.parametrize("args", [
    ("suite", "--only", "constants"),
    ("hardy-verify", "--mode", "feta"),
])
def test_stochastic_commands_require_seed(invoke, args):
    assert invoke(*args).exit_code == 1


def test_verify_bounds_clamps_displayed_bound(invoke):
    result = invoke("verify-bounds", "--lemma", "chain", "--region", "box:2", "--r", "0.3", "--k", "1",
                    "--trials", "20", "--seed", "1")
    assert result.exit_code == 0, result.output
    echoed = _documents(result.stdout)[-1]
    with open(os.path.join(echoed["run_dir"], "bounds.csv")) as f:
        row = next(csv.DictReader(f))
    assert float(row["bound"]) == 1.0
    assert float(row["bound_raw"]) > 1.0


def test_eigen_on_component(invoke, cloud_file):
    result = invoke("eigen", "--cloud", cloud_file, "--theta", "0.05", "--domain", "component:0,r=0.6", "--h", "0.1")
    assert result.exit_code == 0, result.output
    summary = _documents(result.stdout)[-1]["summary"]
    assert set(summary) >= {"lambda", "residual", "iterations"}
    assert summary["lambda"] < 0


def test_eigen_component_out_of_range(invoke, cloud_file):
    assert invoke("eigen", "--cloud", cloud_file, "--theta", "0.05", "--domain", "component:5,r=0.6").exit_code == 1


def test_fk_stopped_option(invoke):
    result = invoke("fk", "--theta", "0.1", "--seed", "3", "--paths", "200", "--stopped", "gamma=2,domain=ball:1")
    assert result.exit_code == 0, result.output
    assert 0.0 < _documents(result.stdout)[-1]["summary"]["mean"] < 1.0


@pytest.mark.parametrize("extra", [
    ("--stopped", "gamma=2"),
    ("--stopped", "gamma=2,domain=ball:1", "--confine", "ball:1"),
])
def test_fk_rejects_bad_stopping(invoke, extra):
    assert invoke("fk", "--theta", "0.1", "--seed", "3", "--paths", "10", *extra).exit_code == 1


def test_fk_confine_with_dt(invoke):
    result = invoke("fk", "--theta", "0.1", "--t", "0.5", "--dt", "0.01", "--seed", "4", "--paths", "200",
                    "--confine", "ball:0.1")
    assert result.exit_code == 0, result.output
    assert _documents(result.stdout)[-1]["summary"]["mean"] < 0.2


def test_excursions_writes_csv_histogram(invoke, cloud_file):
    result = invoke("excursions", "--cloud", cloud_file, "--a", "0.1", "--r", "0.5", "--theta", "0.05",
                    "--t", "0.1", "--dt", "0.01", "--x", "0.5,0.2,0", "--seed", "1", "--paths", "50")
    assert result.exit_code == 0, result.output
    echoed = _documents(result.stdout)[-1]
    with open(os.path.join(echoed["run_dir"], "excursions.csv")) as f:
        rows = list(csv.DictReader(f))
    assert set(rows[0]) == {"E_t", "paths", "mass", "log_scale"}
    assert sum(int(r["paths"]) for r in rows) == 50


def test_hardy_verify_feta(invoke):
    result = invoke("hardy-verify", "--mode", "feta", "--seed", "0", "--n-max", "1", "--grid", "10")
    assert result.exit_code == 0, result.output
    assert _documents(result.stdout)[-1]["summary"]["mode"] == "feta"


def test_runs_list_show_delete(invoke):
    echoed = _documents(invoke("ppp-sample", "--region", "ball:1", "--seed", "9").stdout)[-1]
    run_id = echoed["run_id"]
    listed = _documents(invoke("runs", "list", "--command", "ppp-sample").stdout)[-1]
    assert [r["id"] for r in listed["runs"]] == [run_id]
    shown = invoke("runs", "show", run_id)
    assert shown.exit_code == 0
    assert _documents(shown.stdout)[-1]["command"] == "ppp-sample"
    assert invoke("runs", "delete", run_id).exit_code == 0
    assert not os.path.exists(echoed["run_dir"])
    assert invoke("runs", "delete", run_id).exit_code == 1
    assert invoke("runs", "show", run_id).exit_code == 1
