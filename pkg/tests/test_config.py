"""Tests for the experiment configuration file format."""

from __future__ import annotations

import pytest
import yaml

from kinode import (
    ExperimentConfig,
    config_hash,
    load_experiment_config,
    save_experiment_config,
)
from kinode.config import (
    ConfigError,
    experiment_config_from_dict,
    experiment_config_to_dict,
)
from kinode.training import TrainConfig


class TestDefaults:
    def test_encoder_defaults(self):
        enc = ExperimentConfig().model.encoder
        assert enc.n_layers == 3
        assert enc.n_heads == 8
        assert enc.model_dim == 256
        assert enc.latent_dim == 3
        assert enc.n_tokens == 12
        assert enc.input_dim == 45
        assert enc.dropout == 0.0
        assert enc.resolved_feedforward_dim == 4 * 256

    def test_vector_field_defaults(self):
        field = ExperimentConfig().model.vector_field
        assert field.latent_dim == 3
        assert field.hidden_dims == (128, 128)
        assert field.activation == "tanh"
        assert field.time_input is True

    def test_decoder_defaults(self):
        dec = ExperimentConfig().model.decoder
        assert dec.latent_dim == 3
        assert dec.hidden_dims == (256, 256)
        assert dec.activation == "relu"
        assert dec.output_dim == 45

    def test_train_defaults(self):
        train = ExperimentConfig().train
        assert train.lambda_recon == 1.0
        assert train.lambda_kl == 1e-3
        assert train.learning_rate == 1e-4
        assert train.batch_size == 32
        assert train.epochs == 1500
        assert (train.adam_beta1, train.adam_beta2) == (0.9, 0.999)
        assert train.adam_eps == 1e-8
        assert train.sample_latent is True
        assert train.latent_consistency_weight == 0.0
        assert train.grad_clip_norm is None
        assert train.weight_decay == 0.0

    def test_run_defaults(self):
        config = ExperimentConfig()
        assert config.n_folds == 10
        assert config.data is None
        assert config.synth.n_trials == 200
        assert config.synth.n_frames == 100
        assert config.synth.noise_std == 0.02

    def test_fold_count_validated(self):
        with pytest.raises(ValueError, match="fold"):
            ExperimentConfig(n_folds=0)


def _custom_config() -> ExperimentConfig:
    return experiment_config_from_dict(
        {
            "encoder": {"n_layers": 2, "model_dim": 32, "n_heads": 4,
                        "feedforward_dim": 64},
            "vector_field": {"hidden_dims": [64, 64]},
            "decoder": {"hidden_dims": [64, 64], "output_dim": 45},
            "train": {"epochs": 300, "learning_rate": 3e-3, "batch_size": 256},
            "synth": {"n_trials": 12, "n_frames": 20},
            "n_folds": 3,
            "data": "runs/demo/data",
        }
    )


class TestRoundTrip:
    def test_yaml_file_round_trip(self, tmp_path):
        config = _custom_config()
        path = tmp_path / "experiment.yaml"
        save_experiment_config(config, path)
        assert load_experiment_config(path) == config

    def test_defaults_round_trip(self, tmp_path):
        path = tmp_path / "experiment.yaml"
        save_experiment_config(ExperimentConfig(), path)
        assert load_experiment_config(path) == ExperimentConfig()

    def test_tuples_restored_from_yaml_lists(self):
        config = _custom_config()
        assert config.model.vector_field.hidden_dims == (64, 64)
        assert isinstance(config.model.vector_field.hidden_dims, tuple)

    def test_nested_linear_matrix_restored(self):
        config = experiment_config_from_dict(
            {"synth": {"latent_dim": 2,
                       "linear_matrix": [[0.0, 1.0], [-1.0, 0.0]]}}
        )
        assert config.synth.linear_matrix == ((0.0, 1.0), (-1.0, 0.0))

    def test_saved_file_is_plain_yaml(self, tmp_path):
        path = tmp_path / "experiment.yaml"
        save_experiment_config(_custom_config(), path)
        body = yaml.safe_load(path.read_text())
        assert body["train"]["epochs"] == 300
        assert body["vector_field"]["hidden_dims"] == [64, 64]
        assert body["n_folds"] == 3

    def test_empty_file_means_defaults(self, tmp_path):
        path = tmp_path / "empty.yaml"
        path.write_text("")
        assert load_experiment_config(path) == ExperimentConfig()

    def test_partial_sections_keep_other_defaults(self):
        config = experiment_config_from_dict({"train": {"epochs": 7}})
        assert config.train.epochs == 7
        assert config.train.learning_rate == 1e-4
        assert config.model.encoder.model_dim == 256


class TestRejection:
    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError, match="top-level"):
            experiment_config_from_dict({"trian": {}})

    def test_unknown_section_key_names_section(self):
        with pytest.raises(ConfigError, match="train.*epohcs"):
            experiment_config_from_dict({"train": {"epohcs": 10}})

    def test_invalid_value_names_section(self):
        with pytest.raises(ConfigError, match="train"):
            experiment_config_from_dict({"train": {"epochs": -1}})

    def test_non_mapping_section(self):
        with pytest.raises(ConfigError, match="mapping"):
            experiment_config_from_dict({"encoder": [1, 2]})

    def test_non_mapping_document(self):
        with pytest.raises(ConfigError, match="mapping"):
            experiment_config_from_dict([1, 2])

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_experiment_config(tmp_path / "nope.yaml")

    def test_inconsistent_latent_dims_rejected(self):
        with pytest.raises(ConfigError, match="latent"):
            experiment_config_from_dict({"decoder": {"latent_dim": 5}})


class TestConfigHash:
    def test_stable_for_equal_configs(self):
        assert config_hash(_custom_config()) == config_hash(_custom_config())

    def test_sixteen_hex_chars(self):
        digest = config_hash(ExperimentConfig())
        assert len(digest) == 16
        int(digest, 16)

    def test_sensitive_to_any_field(self):
        base = ExperimentConfig()
        changed = ExperimentConfig(train=TrainConfig(seed=1))
        assert config_hash(base) != config_hash(changed)

    def test_dict_form_is_fully_explicit(self):
        body = experiment_config_to_dict(ExperimentConfig())
        assert set(body) == {
            "encoder", "vector_field", "decoder", "train", "synth",
            "n_folds", "data",
        }
        assert body["train"]["epochs"] == 1500
        assert body["train"]["learning_rate"] == 1e-4
        assert body["encoder"]["n_tokens"] == 12
