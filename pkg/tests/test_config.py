"""Run-configuration file round trips and validation."""

import json

import pytest

from layoutgen.config import RunConfig, load_run_config, run_config_from_dict, save_run_config
from layoutgen.errors import ConfigurationError
from layoutgen.losses import LossWeights
from layoutgen.training import TrainConfig


def test_round_trip(tmp_path):
    cfg = RunConfig(train=TrainConfig(variant="vaegan", max_steps=7),
                    loss_weights=LossWeights(lambda_giou=2.0))
    path = tmp_path / "run.json"
    save_run_config(cfg, path)
    loaded = load_run_config(path)
    assert loaded.train.variant == "vaegan"
    assert loaded.train.max_steps == 7
    assert loaded.loss_weights.lambda_giou == 2.0


def test_partial_file_merges_defaults(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"train": {"max_steps": 3}}))
    loaded = load_run_config(path)
    assert loaded.train.max_steps == 3
    assert loaded.loss_weights.lambda_layout == 500.0
    assert loaded.network.model_dim == 128


def test_unknown_keys_rejected():
    with pytest.raises(ConfigurationError, match="unknown keys"):
        run_config_from_dict({"train": {"momentum": 0.9}})


def test_malformed_file(tmp_path):
    path = tmp_path / "run.json"
    path.write_text("{not json")
    with pytest.raises(ConfigurationError):
        load_run_config(path)


def test_weight_deviation_is_visible_in_file(tmp_path):
    cfg = RunConfig(loss_weights=LossWeights(lambda_overlap=9.0))
    path = tmp_path / "run.json"
    save_run_config(cfg, path)
    payload = json.loads(path.read_text())
    assert payload["loss_weights"]["lambda_overlap"] == 9.0
