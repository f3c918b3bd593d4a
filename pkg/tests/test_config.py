import json

import pytest

from irslab.config import (MANIFEST_KIND, ConfigError, RunConfig, dbm_to_mw, dump_config,
                           load_config)


def test_defaults_validate():
    cfg = RunConfig().validate()
    assert cfg.env.resolutions == (3, 4, 5)
    assert cfg.env.power_per_element == {3: 1.5, 4: 4.5, 5: 6.0}


def test_dbm_conversion():
    assert dbm_to_mw(0.0) == 1.0
    assert dbm_to_mw(30.0) == pytest.approx(1000.0)
    assert dbm_to_mw(-80.0) == pytest.approx(1e-8)


def test_round_trip(tmp_path):
    cfg = RunConfig.from_dict({"seed": 7, "env": {"num_irs": 3, "resolutions": [1, 2],
                                       "power_per_element": {"1": 1.0, "2": 2.0}},
                               "agent": {"hidden": [8], "soft_tau": 0.5}})
    path = tmp_path / "c.json"
    dump_config(cfg, path)
    back = load_config(path)
    assert back == cfg
    assert back.env.resolutions == (1, 2) and back.agent.hidden == (8,)


def test_manifest_is_accepted(tmp_path):
    cfg = RunConfig.from_dict({"seed": 3})
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps({"kind": MANIFEST_KIND, "config": cfg.to_dict(), "seed": 3}))
    assert load_config(path) == cfg


@pytest.mark.parametrize("data,key", [
    ({"bogus": 1}, "bogus"),
    ({"env": {"num_irs": 0}}, "env.num_irs"),
    ({"env": {"nmu_irs": 2}}, "env.nmu_irs"),
    ({"agent": {"hidden": []}}, "agent.hidden"),
    ({"agent": {"gamma": "high"}}, "agent.gamma"),
    ({"algorithm": "dqn"}, "algorithm"),
    ({"env": {"resolutions": [4, 3]}}, "env.resolutions"),
    ({"env": {"resolutions": [2]}}, "env.power_per_element"),
    ({"epochs": 1.5}, "epochs"),
    ({"env": {"e_init": 500.0}}, "env.e_init"),
])
def test_invalid_configs_name_the_key(data, key):
    with pytest.raises(ConfigError, match=key.replace(".", r"\.")):
        RunConfig.from_dict(data)


def test_bad_json(tmp_path):
    p = tmp_path / "x.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(p)
