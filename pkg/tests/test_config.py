import json

import pytest

from trevision.config import ExperimentConfig, StageConfig
from trevision.errors import ConfigError


def test_defaults_validate():
    cfg = ExperimentConfig().validate()
    assert cfg.train.revision.optimizer == "adam"
    assert cfg.train.selection_ties == "latest"


def test_json_round_trip(tmp_path):
    cfg = ExperimentConfig()
    cfg.method, cfg.seeds = "forward-r", [3, 4]
    cfg.train.stage1.milestones = [5, 7]
    cfg.noise.kind, cfg.noise.custom = "custom", [[0.9, 0.1], [0.2, 0.8]]
    cfg.save(tmp_path / "c.json")
    back = ExperimentConfig.load(tmp_path / "c.json")
    assert back == cfg
    assert back.to_json() == cfg.to_json()


def test_partial_document_fills_defaults():
    cfg = ExperimentConfig.from_dict({"method": "backward", "train": {"revision": {"epochs": 2}}})
    assert cfg.train.revision.epochs == 2
    assert cfg.train.revision.optimizer == "adam"
    assert cfg.data == ExperimentConfig().data


@pytest.mark.parametrize("doc,where", [
    ({"bogus": 1}, "config"),
    ({"train": {"stage1": {"lr": 0.1}}}, "config.train.stage1"),
    ({"data": {"radius": 1.0, "colour": 2}}, "config.data"),
])
def test_unknown_keys_named(doc, where):
    with pytest.raises(ConfigError, match=f"unknown keys in {where}"):
        ExperimentConfig.from_dict(doc)


@pytest.mark.parametrize("doc", [
    {"method": "mae"},
    {"seeds": []},
    {"schema_version": 99},
    {"noise": {"rate": 1.0}},
    {"noise": {"kind": "custom"}},
    {"noise": {"kind": "pair"}},
    {"anchor_removal": {"mode": "fraction", "fraction": 1.0}},
    {"anchor_removal": {"cap": 0.0}},
    {"data": {"source": "hdf5"}},
    {"data": {"source": "idx"}},
    {"data": {"source": "csv"}},
    {"data": {"sigma": 0}},
    {"data": {"num_classes": 1}},
    {"train": {"anchors_k": 0}},
    {"train": {"val_fraction": 1.0}},
    {"train": {"hidden": [0]}},
    {"train": {"delta_learning_rate": -1.0}},
    {"train": {"stage1": {"optimizer": "rmsprop"}}},
    {"train": {"revision": {"epochs": -1}}},
    {"train": {"stage2_init": {"batch_size": 0}}},
    {"data": "gaussian"},
])
def test_invalid(doc):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(doc)


def test_bad_json_and_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not valid JSON"):
        ExperimentConfig.from_json("{")
    with pytest.raises(ConfigError, match="cannot read"):
        ExperimentConfig.load(tmp_path / "nope.json")


def test_learning_rate_schedule():
    s = StageConfig(learning_rate=1.0, milestones=[2, 4])
    assert [s.learning_rate_at(e) for e in range(6)] == [1.0, 1.0, 0.1, 0.1, 0.1 ** 2, 0.1 ** 2]


def test_saved_file_is_sorted_json(tmp_path):
    ExperimentConfig().save(tmp_path / "c.json")
    text = (tmp_path / "c.json").read_text()
    assert list(json.loads(text)) == sorted(json.loads(text))
