import pytest

from conftest import TINY
from rain import cli
from rain.cli import build_parser, main, resolve_config
from rain.errors import UsageError


@pytest.fixture
def tiny_file(tmp_path):
    path = tmp_path / "tiny.txt"
    path.write_text("\n".join(f"{k}={v}" for k, v in TINY.items()) + "\n", encoding="utf-8")
    return path


@pytest.fixture(autouse=True)
def no_env_seed(monkeypatch):
    monkeypatch.delenv("RAIN_SEED", raising=False)
    monkeypatch.delenv("RAIN_LOG_LEVEL", raising=False)


def test_missing_out_is_a_usage_error():
    assert main(["simulate"]) == 1


def test_unknown_command():
    assert main(["fly"]) == 1


def test_unknown_config_key(tmp_path):
    assert main(["simulate", "--out", str(tmp_path / "d"), "--set", "sim.bogus=1"]) == 1


def test_bad_seed_variable(tmp_path, monkeypatch):
    monkeypatch.setenv("RAIN_SEED", "abc")
    assert main(["simulate", "--out", str(tmp_path / "d")]) == 1


def test_full_scale_preset():
    config = resolve_config(build_parser().parse_args(["simulate", "--out", "x", "--full-scale"]))
    assert (config.run.n_train, config.run.n_val, config.run.n_test) == (8000, 4000, 4000)
    assert config.train.epochs == 100


def test_flags_override_layers(tiny_file, monkeypatch):
    monkeypatch.setenv("RAIN_SEED", "11")
    args = build_parser().parse_args(["simulate", "--out", "x", "--config", str(tiny_file), "--train", "7"])
    config = resolve_config(args)
    assert config.train.seed == 11
    assert config.run.n_train == 7
    assert config.run.n_val == 4
    args = build_parser().parse_args(["simulate", "--out", "x", "--seed", "4", "--set", "train.epochs=9"])
    config = resolve_config(args)
    assert config.train.seed == 4
    assert config.train.epochs == 9


def test_malformed_set_pair():
    with pytest.raises(UsageError):
        resolve_config(build_parser().parse_args(["simulate", "--out", "x", "--set", "train.epochs"]))


def test_simulate_is_reproducible(tmp_path, tiny_file):
    for name in ("a", "b"):
        assert main(["simulate", "--out", str(tmp_path / name), "--config", str(tiny_file), "--quiet"]) == 0
    assert (tmp_path / "a" / "manifest.txt").read_bytes() == (tmp_path / "b" / "manifest.txt").read_bytes()
    assert (tmp_path / "a" / "config.txt").exists()


def test_evaluate_missing_run(tmp_path, tiny_dataset):
    assert main(["evaluate", "--data", str(tiny_dataset.path), "--run", str(tmp_path / "none")]) == 3


def test_formal_stage_without_pretraining(tmp_path, tiny_dataset, tiny_file):
    argv = ["train", "--data", str(tiny_dataset.path), "--run", str(tmp_path / "run"),
            "--config", str(tiny_file), "--stage", "formal", "--quiet"]
    assert main(argv) == 3


def test_missing_dataset(tmp_path):
    assert main(["train", "--data", str(tmp_path / "none"), "--run", str(tmp_path / "run")]) == 2


def test_run_directory_under_a_file(tmp_path, tiny_dataset):
    blocker = tmp_path / "file"
    blocker.write_text("not a directory", encoding="utf-8")
    argv = ["train", "--data", str(tiny_dataset.path), "--run", str(blocker / "run"), "--quiet"]
    assert main(argv) == 2


def test_unreadable_run_config(tmp_path, tiny_dataset):
    (tmp_path / "run" / "config.txt").mkdir(parents=True)
    assert main(["evaluate", "--data", str(tiny_dataset.path), "--run", str(tmp_path / "run")]) == 2


def test_seeds_come_from_flag_or_config(tmp_path, tiny_dataset, tiny_file, monkeypatch):
    calls = []
    monkeypatch.setattr(cli, "run_seeds", lambda dataset, config, run_dir, seeds, progress: calls.append(seeds))
    base = ["train", "--data", str(tiny_dataset.path), "--run", str(tmp_path / "run"),
            "--config", str(tiny_file), "--quiet"]
    assert main(base + ["--set", "train.seeds=2,3"]) == 0
    assert main(base + ["--seeds", "4"]) == 0
    assert calls == [(2, 3), (4,)]


def test_checkpoint_dir_reaches_the_run_directory(tmp_path, tiny_dataset, tiny_file, monkeypatch):
    seen = []
    monkeypatch.setattr(cli, "run_all", lambda dataset, config, run_dir, stage, progress: seen.append(run_dir))
    argv = ["train", "--data", str(tiny_dataset.path), "--run", str(tmp_path / "run"),
            "--config", str(tiny_file), "--set", "train.checkpoint_dir=ckpt", "--quiet"]
    assert main(argv) == 0
    assert seen[0].checkpoints == tmp_path / "run" / "ckpt"


def test_train_and_evaluate(tmp_path, tiny_file):
    data, run = str(tmp_path / "data"), str(tmp_path / "run")
    assert main(["simulate", "--out", data, "--config", str(tiny_file), "--quiet"]) == 0
    assert main(["train", "--data", data, "--run", run, "--config", str(tiny_file), "--quiet"]) == 0
    assert main(["train", "--data", data, "--run", run, "--ablation", "full+soft", "--quiet"]) == 0
    assert main(["evaluate", "--data", data, "--run", run, "--mode", "dynamic", "--tau", "1", "--quiet"]) == 0
    metrics = tmp_path / "run" / "metrics"
    assert (metrics / "full_soft.txt").exists()
    assert (metrics / "evaluate_dynamic_tau1.txt").exists()
    assert "full+soft" in (metrics / "mse_curve_dynamic_tau1.txt").read_text(encoding="utf-8").splitlines()[0]
