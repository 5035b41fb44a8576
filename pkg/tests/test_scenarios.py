import json

import numpy as np
import pytest

from metransport import ConvergenceError
from metransport.experiments import parse_config, run_scenario
from metransport.experiments import scenarios
from metransport.experiments.artifacts import FAILURE_MARKER, read_field_csv


def run(tmp_path, scenario, **doc):
    out = tmp_path / scenario
    report = run_scenario(parse_config(json.dumps(doc), scenario=scenario), out)
    return out, report


def check_artifacts(out, report):
    for name in report.artifacts:
        assert (out / name).exists(), name
    on_disk = json.loads((out / "report.json").read_text())
    assert on_disk == json.loads(report.to_json())
    assert len(on_disk["provenance"]["config_sha256"]) == 64


def test_s2_absorbing(tmp_path):
    out, rep = run(tmp_path, "S2_absorbing_smooth")
    check_artifacts(out, rep)
    m = rep.metrics
    assert m["rate_ratio"] == pytest.approx(1.0, abs=0.15)
    assert m["fpe_beats_fick"] and m["fick_neumann_rate"] == 0.0
    assert rep.ledger_error() < 1e-10
    # the interior has drained while the frozen exterior holds the rest
    assert rep.mass_ledger["interior"] < rep.mass_ledger["exterior"]


def test_s3_layer_confined(tmp_path):
    out, rep = run(tmp_path, "S3_sharp_interface")
    check_artifacts(out, rep)
    m = rep.metrics
    assert m["layer_confined"]
    assert 0 < m["boundary_layer_width"] <= 4 * m["mean_jump_length"]
    assert m["layer_width_left"] == pytest.approx(m["layer_width_right"], rel=1e-6)


def test_s1_homogeneous(tmp_path):
    out, rep = run(tmp_path, "S1_reflecting_smooth",
                   kernel={"modulation": {"form": "constant", "value": 1.0}})
    check_artifacts(out, rep)
    assert rep.metrics["me_converged"]
    assert rep.metrics["fick_core_rel_l2"] < 1e-3
    assert rep.ledger_error() < 1e-10
    fields = np.loadtxt(out / "s1_fields.csv", delimiter=",", comments="#", skiprows=1)
    assert fields.shape[1] == 4 and np.all(fields[:, 1:] >= 0)


def test_s4_small_ensemble(tmp_path):
    out, rep = run(tmp_path, "S4_clt", seed=5, run={"walkers": 4000})
    check_artifacts(out, rep)
    m = rep.metrics
    assert m["kurtosis_exponent"] == pytest.approx(-1.0, abs=1e-6)
    assert m["oracle_max_abs_error"] < 1e-6
    assert m["mc_max_z"] < 4
    assert m["ks_distance_oracle"] < 0.01


def test_s5_small_ensemble(tmp_path):
    out, rep = run(tmp_path, "S5_coefficient_sweep", seed=5, run={"walkers": 4000})
    check_artifacts(out, rep)
    assert rep.metrics["max_rel_error_D_quadrature"] < 1e-6
    assert rep.metrics["max_z_D_walkers"] < 4.5


def test_custom_pipeline(tmp_path):
    out, rep = run(tmp_path, "custom", seed=2, run={"walkers": 4000, "snapshot_times": [0.5]})
    check_artifacts(out, rep)
    for name in ("me_field.csv", "me_field_0.csv", "pde_field.csv"):
        f = read_field_csv(out / name)
        assert f.mass() == pytest.approx(rep.mass_ledger["initial"], rel=1e-10)
    assert read_field_csv(out / "me_field_0.csv").t == 0.5
    assert rep.metrics["walker_max_z_1"] < 4.5
    assert rep.ledger_error() < 1e-12


def test_open_closure_books_escape(tmp_path):
    _, rep = run(tmp_path, "custom", run={"closure": "open", "t_end": 20.0},
                 initial={"form": "constant", "value": 1.0})
    assert rep.mass_ledger["escaped"] > 0
    assert rep.ledger_error() < 1e-10


def test_failing_stage_leaves_marker(tmp_path, monkeypatch):
    def broken(*args, **kwargs):
        raise ConvergenceError("inverse iteration stalled")

    monkeypatch.setattr(scenarios, "slowest_mode", broken)
    out = tmp_path / "s2"
    with pytest.raises(ConvergenceError) as err:
        run_scenario(parse_config("{}", scenario="S2_absorbing_smooth"), out)
    marker = json.loads((out / FAILURE_MARKER).read_text())
    assert marker["stage"] == err.value.stage
    assert marker["error"] == "ConvergenceError"
    assert (out / "config.resolved.json").exists()
    assert not (out / "report.json").exists()
    monkeypatch.undo()
    run_scenario(parse_config("{}", scenario="S2_absorbing_smooth"), out)
    assert not (out / FAILURE_MARKER).exists()
