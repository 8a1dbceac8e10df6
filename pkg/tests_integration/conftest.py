import logging

import pytest

from stc_slr.pose_data import load_dataset
from stc_slr.settings.config_schema import RunConfig
from stc_slr.synth import synth_generate


SEEDS = (0, 1, 2)

# Narrow networks so a 30-epoch run fits on a CPU; the synthetic profile supplies N, K and the epochs
DESK_OVERRIDES = dict(
    embed_dim=64,
    proj_dim=32,
    proj_hidden=64,
    gcn_channels=[16, 32],
    model_dim=32,
    num_heads=4,
    num_layers=1,
    ff_dim=64,
    hand_resolution=128,
    num_workers=4,
)


def pytest_configure(config: pytest.Config) -> None:
    # Keep wandb quiet when a key is exported
    logging.getLogger("wandb").setLevel(logging.WARNING)


def pytest_addoption(parser: pytest.Parser) -> None:
    """
    Add custom command line options to pytest.

    Args:
        parser (pytest.Parser): The pytest parser object used to define custom command line options.
    """
    arg_definitions = [
        ("--seeds", dict(type=int, nargs="+", default=list(SEEDS), help="Seeds averaged by the experiments.")),
        (
            "--suppress-log-files",
            dict(action="store_true", help="Suppress all generated log files."),
        ),
    ]

    for name, kwargs in arg_definitions:
        parser.addoption(name, **kwargs)


@pytest.fixture(scope="session")
def seeds(request: pytest.FixtureRequest) -> list:
    return request.config.getoption("--seeds")


@pytest.fixture(scope="session")
def generate_log_files(request: pytest.FixtureRequest) -> bool:
    return not request.config.getoption("--suppress-log-files")


@pytest.fixture(scope="session")
def desk_config() -> RunConfig:
    return RunConfig.from_defaults("synthetic").replace(**DESK_OVERRIDES)


@pytest.fixture(scope="session")
def synthetic_dataset(tmp_path_factory):
    """
    Eight classes with forty 64-frame samples each; a quarter of every class is held out.
    """
    out_dir = tmp_path_factory.mktemp("synthetic")
    return load_dataset(synth_generate(str(out_dir), num_classes=8, samples_per_class=40, num_frames=64, seed=0))
