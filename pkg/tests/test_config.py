import json
from pathlib import Path

import pytest

from metransport import ConfigError
from metransport.experiments import default_config, load_config, parse_config
from metransport.experiments.config import DEFAULTS, SCENARIOS, load_schema

ROOT = Path(__file__).resolve().parents[1]


def test_shipped_schema_matches_docs():
    docs = json.loads((ROOT / "docs" / "experiment.schema.json").read_text())
    assert docs == load_schema()


def test_minimal_s4_document_gets_defaults():
    cfg = parse_config('{"scenario": "S4_clt", "seed": 3}')
    assert cfg.scenario == "S4_clt"
    assert cfg.seed == 3
    assert cfg.document["kernel"] == {"family": "tophat", "a": 0.1}
    assert cfg.run["steps"] == [5, 10, 20, 40]
    assert cfg.run["walkers"] == 100_000
    assert cfg.run["workers"] == 1 and cfg.run["dt_safety"] == 1.0
    assert cfg.output_dir == "out"


def test_negative_sigma_names_path():
    with pytest.raises(ConfigError) as err:
        parse_config('{"kernel": {"family": "gaussian", "sigma": -0.1}, "rate": {"base": 1},'
                     '"grid": {"x_min": 0, "x_max": 1, "n": 64}}')
    assert err.value.path == "$.kernel.sigma"


def test_unknown_key_rejected():
    with pytest.raises(ConfigError) as err:
        parse_config('{"kernel": {"family": "gaussian", "sigma_x": 0.1}}')
    assert "sigma_x" in str(err.value)
    with pytest.raises(ConfigError) as err:
        parse_config('{"scenario": "S4_clt", "seed": 1, "colour": "red"}')
    assert "colour" in str(err.value)


@pytest.mark.parametrize("scenario", ["S4_clt", "S5_coefficient_sweep"])
def test_stochastic_scenarios_need_seed(scenario):
    with pytest.raises(ConfigError) as err:
        parse_config(json.dumps({"scenario": scenario}))
    assert err.value.path == "$.seed"


def test_walker_runs_need_seed():
    with pytest.raises(ConfigError) as err:
        parse_config('{"run": {"walkers": 100}}')
    assert err.value.path == "$.seed"
    assert parse_config('{"run": {"walkers": 100}}', seed=4).seed == 4


@pytest.mark.parametrize("scenario", SCENARIOS)
def test_every_default_resolves(scenario):
    cfg = default_config(scenario, seed=1)
    assert cfg.scenario == scenario
    assert set(DEFAULTS[scenario]) <= set(cfg.document)


def test_partial_override_merges():
    cfg = parse_config('{"kernel": {"modulation": 1.0}}', scenario="S1_reflecting_smooth")
    assert cfg.document["kernel"]["family"] == "detailed_balance"
    assert cfg.document["kernel"]["modulation"] == 1.0
    assert "rate" not in cfg.document


def test_family_switch_replaces_kernel():
    cfg = parse_config('{"kernel": {"family": "gaussian", "sigma": 0.03}, "rate": {"base": 2}}',
                       scenario="S2_absorbing_smooth")
    assert cfg.document["kernel"] == {"family": "gaussian", "sigma": 0.03}


def test_cross_field_rules():
    cases = [
        ('{"scenario": "S1_reflecting_smooth", "rate": {"base": 1}}', "$.rate"),
        ('{"scenario": "S2_absorbing_smooth", "kernel": {"family": "tophat", "a": 0.1}}',
         "$.kernel.family"),
        ('{"scenario": "S4_clt", "seed": 1, "kernel": {"family": "detailed_balance",'
         '"base": {"width": 0.1}}}', "$.kernel.family"),
        ('{"scenario": "S2_absorbing_smooth", "grid": {"x_min": 0, "n": 64}}', "$.grid"),
        ('{"grid": {"x_min": 1, "x_max": 0, "n": 64}}', "$.grid.x_max"),
        ('{"scenario": "S2_absorbing_smooth", "walls": {"left": 1, "right": 0}}', "$.walls.right"),
        ('{"scenario": "nope"}', "$.scenario"),
    ]
    for text, path in cases:
        with pytest.raises(ConfigError) as err:
            parse_config(text)
        assert err.value.path == path, text


def test_malformed_documents():
    with pytest.raises(ConfigError):
        parse_config("{not json")
    with pytest.raises(ConfigError):
        parse_config("[1, 2]")


def test_overrides_and_digest(tmp_path):
    path = tmp_path / "c.json"
    path.write_text('{"scenario": "S4_clt", "seed": 5, "output_dir": "a"}')
    cfg = load_config(path, seed=6)
    assert cfg.seed == 6
    moved = cfg.with_overrides(output_dir="b")
    assert moved.output_dir == "b"
    assert moved.digest() == cfg.digest()
    threaded = parse_config('{"scenario": "S4_clt", "seed": 6, "run": {"workers": 4}}')
    assert threaded.digest() == cfg.digest()
    assert cfg.with_overrides(seed=7).digest() != cfg.digest()
    assert len(cfg.digest()) == 64
