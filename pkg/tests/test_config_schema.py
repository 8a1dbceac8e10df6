from argparse import Namespace
from unittest.mock import patch

import pytest

from stc_slr.exceptions import ConfigError
from stc_slr.settings.config_schema import (
    Modality,
    Part,
    Protocol,
    RunConfig,
    modalities_from_choice,
)


class TestEnums:
    def test_values(self):
        assert Part.RIGHT_HAND.value == "right_hand"
        assert Modality.MOTION.value == "motion"
        assert Protocol.LINEAR_PROBE.value == "linear_probe"

    def test_modalities_from_choice(self):
        assert modalities_from_choice("both") == [Modality.JOINT, Modality.MOTION]
        assert modalities_from_choice("motion") == [Modality.MOTION]
        with pytest.raises(ConfigError):
            modalities_from_choice("bones")


class TestRunConfig:
    """Test suite for RunConfig loading, merging and validation."""

    def test_packaged_defaults(self):
        config = RunConfig.from_defaults()
        assert config.bank_size == 16384
        assert config.num_neighbors == 8192
        assert config.gcn_channels == [64, 128]
        assert config.topk == [1, 5]
        assert config.pretrain_modalities == [Modality.JOINT, Modality.MOTION]

    def test_synthetic_profile_overlays_defaults(self):
        config = RunConfig.from_defaults("synthetic")
        assert (config.bank_size, config.num_neighbors, config.pretrain_epochs) == (512, 256, 30)
        assert config.lr == RunConfig.from_defaults().lr

    def test_unknown_profile(self):
        with pytest.raises(ConfigError, match="profile"):
            RunConfig.from_defaults("does-not-exist")

    def test_from_dict_rejects_unknown_and_missing_keys(self):
        values = RunConfig.from_defaults().to_dict()
        with pytest.raises(ConfigError, match="Unknown"):
            RunConfig.from_dict({**values, "bogus": 1})
        del values["seed"]
        with pytest.raises(ConfigError, match="Missing config keys: seed"):
            RunConfig.from_dict(values)

    @pytest.mark.parametrize(
        "changes,message",
        [
            (dict(tau_contrast=0.0), "temperatures"),
            (dict(key_momentum=1.5), "key_momentum"),
            (dict(bank_size=8, batch_size=16), "bank_size"),
            (dict(model_dim=10, num_heads=4), "num_heads"),
            (dict(parts="fingers"), "parts"),
            (dict(pretrain_fraction=1.2), "pretrain_fraction"),
            (dict(topk=[]), "topk"),
        ],
    )
    def test_replace_validates(self, changes, message):
        with pytest.raises(ConfigError, match=message):
            RunConfig.from_defaults().replace(**changes)

    def test_from_file_overlays_a_toml_file(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text("bank_size = 64\nnum_neighbors = 32\nuse_kt = false\n")
        config = RunConfig.from_file(str(path), "synthetic")
        assert (config.bank_size, config.num_neighbors, config.use_kt) == (64, 32, False)
        assert config.pretrain_epochs == 30

    def test_from_file_unknown_key(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text("bank_sise = 64\n")
        with pytest.raises(ConfigError, match="bank_sise"):
            RunConfig.from_file(str(path))

    def test_from_file_missing(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            RunConfig.from_file(str(tmp_path / "missing.toml"))

    def test_from_cli_args_with_defaults(self):
        args = Namespace(profile="synthetic", config=None, seed=7, bank_size=None, command="pretrain")
        config = RunConfig.from_cli_args_with_defaults(args)
        assert config.seed == 7
        assert config.bank_size == 512

    @patch("stc_slr.settings.config_schema.get_settings")
    def test_from_cli_args_with_mocked_settings(self, mock_get_settings):
        run = RunConfig.from_defaults().to_dict()
        mock_get_settings.return_value = {"run": {**run, "batch_size": 4, "bank_size": 8}}
        config = RunConfig.from_cli_args_with_defaults(Namespace(num_neighbors=2))
        assert (config.batch_size, config.bank_size, config.num_neighbors) == (4, 8, 2)
