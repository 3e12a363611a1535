import json
from dataclasses import replace

import pytest

from eqevid.config import ConfigError, RunConfig


def test_defaults():
    cfg = RunConfig()
    assert cfg.train.lr == 2e-4 and cfg.train.epochs == 200 and cfg.train.batch_size == 16
    assert cfg.loss.forces == 1e4 and cfg.ensemble.members == 5 and cfg.eval.es_samples == 128


def test_json_round_trip(tmp_path):
    cfg = RunConfig(seed=4)
    cfg = replace(cfg, train=replace(cfg.train, lr=1e-3, max_steps=7))
    cfg.to_json(tmp_path / "c.json")
    back = RunConfig.load(tmp_path / "c.json")
    assert back == cfg


def test_partial_document_keeps_defaults():
    cfg = RunConfig.from_dict({"train": {"epochs": 3}, "data": {"n_configs": 10}})
    assert cfg.train.epochs == 3 and cfg.train.lr == 2e-4
    assert cfg.data.n_configs == 10 and cfg.data.atoms_min == 8


@pytest.mark.parametrize("doc", [
    {"bogus": 1},
    {"train": {"learning_rate": 1}},
    {"train": 5},
    {"train": {"lr": -1.0}},
    {"train": {"batch_size": 0}},
    {"ensemble": {"members": 1}},
    {"ensemble": {"target": 1.5}},
])
def test_invalid_documents(doc):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(doc)


def test_unknown_key_is_named():
    with pytest.raises(ConfigError, match="learning_rate"):
        RunConfig.from_dict({"train": {"learning_rate": 1}})


def test_load_rejects_bad_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        RunConfig.load(p)
    p.write_text(json.dumps([1, 2]))
    with pytest.raises(ConfigError):
        RunConfig.load(p)
