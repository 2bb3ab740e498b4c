import json

import pytest

from hifgo.config import FieldError, load_config, parse_text, validate


def test_fixture_config_loads(fixture_config):
    cfg = load_config(fixture_config)
    assert cfg.seed == 0 and cfg.stream.n_tasks == 3 and cfg.optim.method == "sgd"


def test_defaults_follow_library():
    cfg = validate({"seed": 1})
    assert (cfg.reg.lambda1, cfg.reg.lambda2) == (2e-2, 1e-2)
    assert cfg.optim.method == "sgd-momentum" and cfg.strategy.name == "hifgo-proxy"


def test_missing_seed_names_field():
    with pytest.raises(FieldError) as info:
        validate({"stream": {}})
    assert info.value.path == "seed"


@pytest.mark.parametrize("raw, path", [
    ({"seed": 0, "bogus": 1}, "bogus"),
    ({"seed": 0, "optim": {"lr": "fast"}}, "optim.lr"),
    ({"seed": 0, "optim": {"learning_rate": 0.1}}, "optim.learning_rate"),
    ({"seed": 0, "strategy": {"name": "ewc"}}, "strategy.name"),
    ({"seed": 0, "reg": {"lambda2": -1.0}}, "reg.lambda2"),
    ({"seed": -3}, "seed"),
    ({"seed": 0, "stream": {"generator": "mnist"}}, "stream.generator"),
    ({"seed": 0, "model": {"rank": 0}}, "model.rank"),
    ({"seed": 0, "strategy": {"two_stage": "yes"}}, "strategy.two_stage"),
])
def test_field_errors(raw, path):
    with pytest.raises(FieldError) as info:
        validate(raw)
    assert info.value.path == path


def test_json_and_toml_agree(tmp_path):
    raw = {"seed": 4, "reg": {"lambda1": 0.03}, "optim": {"epochs2": 2}}
    j = tmp_path / "c.json"
    j.write_text(json.dumps(raw))
    t = tmp_path / "c.toml"
    t.write_text("seed = 4\n[reg]\nlambda1 = 0.03\n[optim]\nepochs2 = 2\n")
    assert load_config(j) == load_config(t)


def test_unparsable_file(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("seed = = 1\n")
    with pytest.raises(FieldError):
        load_config(p)


def test_roundtrip_through_dict():
    cfg = validate({"seed": 9, "subset": {"count": 5}})
    assert validate(cfg.to_dict()) == cfg


def test_parse_text_json():
    assert parse_text('{"seed": 1}', ".json") == {"seed": 1}
