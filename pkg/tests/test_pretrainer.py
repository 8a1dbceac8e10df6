import os

import numpy as np
import pytest

from stc_slr.checkpoint import load_checkpoint, load_sidecar
from stc_slr.exceptions import ConfigError, NonFiniteError, TrainingDivergedError
from stc_slr.pretrainer import Pretrainer, build_encoders, encoder_state, pretrain
from stc_slr.settings.config_schema import Modality


@pytest.fixture
def train_split(tiny_dataset):
    return tiny_dataset.split("train")


def _trainer(config, dataset, tmp_path, **kwargs):
    return Pretrainer(config, dataset, str(tmp_path / "pretrain.stck"), generate_log_files=False, **kwargs)


@pytest.mark.timeout(300)
class TestPretrainer:
    def test_warm_up_fills_banks_in_lockstep(self, tiny_config, train_split, tmp_path):
        trainer = _trainer(tiny_config, train_split, tmp_path)
        assert trainer.steps_per_epoch == 4
        assert trainer.warm_up() == 16
        assert set(trainer.banks.lengths().values()) == {16}

    def test_train_step_keeps_banks_in_lockstep(self, tiny_config, train_split, tmp_path):
        trainer = _trainer(tiny_config.replace(bank_size=32), train_split, tmp_path)
        trainer.warm_up()
        before = len(trainer.banks)
        components = trainer.train_step(trainer._batches(1)[0], epoch=0, step=0)
        assert len(trainer.banks) == before + 4
        assert trainer.global_step == 1
        assert all(components[k] is not None for k in ("cl_joint", "con_joint", "cl_motion", "con_motion", "kt"))

    def test_key_encoders_move_towards_queries(self, tiny_config, train_split, tmp_path):
        trainer = _trainer(tiny_config, train_split, tmp_path)
        trainer.warm_up()
        key_before = trainer.key[Modality.JOINT].trunk_stream.head.weight.data.copy()
        trainer.train_step(trainer._batches(1)[0], epoch=0, step=0)
        query = trainer.query[Modality.JOINT].trunk_stream.head.weight.data
        key_after = trainer.key[Modality.JOINT].trunk_stream.head.weight.data
        expected = tiny_config.key_momentum * key_before + (1.0 - tiny_config.key_momentum) * query
        np.testing.assert_allclose(key_after, expected, rtol=1e-5, atol=1e-6)

    def test_total_is_weighted_sum_of_components(self, tiny_config, train_split, tmp_path):
        config = tiny_config.replace(lambda_joint=0.7, lambda_motion=0.0, use_kt=False)
        trainer = _trainer(config, train_split, tmp_path)
        trainer.warm_up()
        views_q, views_k = trainer._views(trainer._batches(1)[0], 1, 0, 0)
        _, components, _ = trainer.compute_losses(views_q, views_k)
        assert components["kt"] is None
        expected = 0.7 * (components["cl_joint"] + components["con_joint"])
        assert components["total"] == pytest.approx(expected, rel=1e-5)

    def test_without_consistency(self, tiny_config, train_split, tmp_path):
        config = tiny_config.replace(use_consistency=False, use_kt=False)
        trainer = _trainer(config, train_split, tmp_path)
        trainer.warm_up()
        views_q, views_k = trainer._views(trainer._batches(1)[0], 1, 0, 0)
        _, components, _ = trainer.compute_losses(views_q, views_k)
        assert components["con_joint"] is None and components["con_motion"] is None
        expected = 0.5 * components["cl_joint"] + 0.5 * components["cl_motion"]
        assert components["total"] == pytest.approx(expected, rel=1e-5)

    def test_single_modality(self, tiny_config, train_split, tmp_path):
        path = pretrain(
            tiny_config.replace(modalities="motion"), train_split, str(tmp_path / "m.stck"), generate_log_files=False
        )
        names = list(load_checkpoint(path))
        assert names and all(name.startswith("motion.") for name in names)
        assert load_sidecar(path)["metadata"]["modalities"] == ["motion"]

    def test_equal_seeds_give_identical_checkpoints(self, tiny_config, train_split, tmp_path):
        a = pretrain(tiny_config, train_split, str(tmp_path / "a.stck"), generate_log_files=False)
        b = pretrain(tiny_config, train_split, str(tmp_path / "b.stck"), generate_log_files=False)
        params_a, params_b = load_checkpoint(a), load_checkpoint(b)
        assert list(params_a) == list(params_b)
        for name in params_a:
            np.testing.assert_array_equal(params_a[name], params_b[name])

    def test_checkpoint_and_sidecar(self, pretrained_checkpoint, tiny_config):
        params = load_checkpoint(pretrained_checkpoint)
        assert any(name.startswith("joint.") for name in params)
        assert any(name.startswith("motion.") for name in params)
        sidecar = load_sidecar(pretrained_checkpoint)
        assert sidecar["config"] == tiny_config.to_dict()
        assert sidecar["metadata"] == {
            "kind": "pretrain",
            "modalities": ["joint", "motion"],
            "epochs_completed": 1,
            "steps": 4,
            "num_samples": 18,
        }

    def test_zero_fraction_writes_initial_weights(self, tiny_config, train_split, tmp_path):
        config = tiny_config.replace(pretrain_fraction=0.0)
        path = pretrain(config, train_split, str(tmp_path / "random.stck"), generate_log_files=False)
        assert load_sidecar(path)["metadata"]["epochs_completed"] == 0
        expected = encoder_state(build_encoders(config, config.pretrain_modalities))
        params = load_checkpoint(path)
        assert list(params) == list(expected)
        for name, value in expected.items():
            np.testing.assert_array_equal(params[name], value.data)

    def test_too_few_samples(self, tiny_config, train_split, tmp_path):
        with pytest.raises(ConfigError, match="batch_size"):
            _trainer(tiny_config.replace(pretrain_fraction=0.1), train_split, tmp_path)

    def test_divergence_names_step_and_components(self, tiny_config, train_split, tmp_path, mocker):
        mocker.patch("stc_slr.pretrainer.consistency_loss", side_effect=NonFiniteError("nan in softmax"))
        trainer = _trainer(tiny_config, train_split, tmp_path)
        with pytest.raises(TrainingDivergedError) as exc_info:
            trainer.run()
        assert exc_info.value.step == 0
        assert set(exc_info.value.components) == {"cl_joint"}
        assert "nan in softmax" in str(exc_info.value)
        assert not os.path.exists(trainer.checkpoint_path)

    def test_steps_are_recorded(self, tiny_config, train_split, tmp_path, mocker):
        run_db = mocker.Mock()
        trainer = _trainer(tiny_config, train_split, tmp_path, run_db=run_db, run_name="tiny")
        trainer.run()
        assert run_db.insert_step.call_count == 4
        name, protocol, epoch, step, lr, components = run_db.insert_step.call_args_list[0].args
        assert (name, protocol, epoch, step, lr) == ("tiny", "pretrain", 0, 0, tiny_config.lr)
        assert len(trainer.history) == 4
