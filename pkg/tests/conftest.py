import os

import pytest

from stc_slr.pose_data import load_dataset
from stc_slr.pretrainer import pretrain
from stc_slr.settings.config_schema import RunConfig
from stc_slr.synth import synth_generate


TINY_OVERRIDES = dict(
    seq_len=8,
    embed_dim=16,
    proj_dim=8,
    proj_hidden=16,
    gcn_channels=[4],
    model_dim=8,
    num_heads=2,
    num_layers=1,
    ff_dim=16,
    bank_size=16,
    num_neighbors=8,
    batch_size=4,
    pretrain_epochs=1,
    finetune_epochs=1,
    probe_epochs=2,
    hand_resolution=64,
)


@pytest.fixture
def tiny_config():
    """
    Desk-sized run configuration: every network is a few hundred parameters wide.
    """
    return RunConfig.from_defaults("synthetic").replace(**TINY_OVERRIDES)


@pytest.fixture(scope="session")
def tiny_manifest(tmp_path_factory):
    """
    Three classes with eight 12-frame samples each (six train, two test per class).
    """
    out_dir = tmp_path_factory.mktemp("tiny_synth")
    return synth_generate(str(out_dir), num_classes=3, samples_per_class=8, num_frames=12, seed=0)


@pytest.fixture(scope="session")
def tiny_dataset(tiny_manifest):
    return load_dataset(tiny_manifest)


@pytest.fixture
def pretrained_checkpoint(tiny_config, tiny_dataset, tmp_path):
    """
    A checkpoint from one pre-training epoch on the tiny training split.
    """
    path = os.path.join(str(tmp_path), "pretrain.stck")
    return pretrain(tiny_config, tiny_dataset.split("train"), path, generate_log_files=False)
