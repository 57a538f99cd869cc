import pytest
from hypothesis import settings

from rain.config import RunConfig
from rain.dataset.operations import DatasetHandle, generate_dataset
from rain.pipeline import RunDirectory, run_all

settings.register_profile("rain", database=None, max_examples=25, deadline=None)
settings.load_profile("rain")

# Small enough for CPU test runs: 6 particles, 4 history and 3 future frames
TINY = {
    "sim.history_steps": "4",
    "sim.future_steps": "3",
    "sim.total_steps": "7",
    "sim.subsample_stride": "10",
    "gen.burn_in": "4",
    "gen.horizon": "3",
    "gen.tau": "3",
    "gen.hidden": "16",
    "gen.n_heads": "2",
    "gen.k_samples": "3",
    "gen.pretrain_epochs": "2",
    "gmp.hidden": "8",
    "gmp.pretrain_epochs": "2",
    "dqn.hidden": "16",
    "dqn.t_rl": "2",
    "dqn.batch_size": "8",
    "dqn.buffer_capacity": "500",
    "dqn.updates_per_epoch": "2",
    "dqn.target_sync": "2",
    "opt.batch_size": "4",
    "train.epochs": "3",
    "train.n_s": "1",
    "train.n_ft": "2",
    "train.seed": "5",
    "train.classifier_epochs": "2",
    "eval.tau": "1",
    "eval.n_attention_cases": "2",
    "eval.plots": "false",
    "run.n_train": "10",
    "run.n_val": "4",
    "run.n_test": "4",
}


def tiny_run_config(**overrides: str) -> RunConfig:
    config = RunConfig()
    config.update(TINY)
    config.update(overrides)
    config.validate()
    return config


@pytest.fixture
def tiny_config() -> RunConfig:
    return tiny_run_config()


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory) -> DatasetHandle:
    config = tiny_run_config()
    return generate_dataset(config.sim, 10, 4, 4, seed=3, out_dir=tmp_path_factory.mktemp("data"))


@pytest.fixture(scope="session")
def trained_run(tmp_path_factory, tiny_dataset) -> RunDirectory:
    """Pretrained and formally trained tiny run, shared by evaluation tests."""
    run_dir = RunDirectory(tmp_path_factory.mktemp("run"))
    run_all(tiny_dataset, tiny_run_config(), run_dir, "all")
    return run_dir
