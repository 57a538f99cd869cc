import numpy as np
import pytest
import torch

from conftest import tiny_run_config
from rain import pipeline
from rain.errors import ContractViolation, MissingPrerequisiteError, UsageError
from rain.evaluation.reports import parse_metrics
from rain.learners import ParamSet
from rain.pipeline import (
    RunDirectory,
    load_pretrained,
    run_ablation,
    run_all,
    run_evaluation,
    run_formal_training,
    run_pretraining,
)


@pytest.fixture(scope="module")
def pretrained(tiny_dataset):
    return run_pretraining(tiny_dataset, tiny_run_config())


def test_pretraining_is_reproducible(tiny_dataset, pretrained):
    gmp_params, generator_params = run_pretraining(tiny_dataset, tiny_run_config())
    assert gmp_params.digest() == pretrained[0].digest()
    assert generator_params.digest() == pretrained[1].digest()


def test_pretraining_writes_checkpoints(tiny_dataset, tmp_path):
    run_dir = RunDirectory(tmp_path)
    run_pretraining(tiny_dataset, tiny_run_config(), run_dir)
    assert run_dir.checkpoint(run_dir.pretrain, "gmp").exists()
    assert run_dir.checkpoint(run_dir.pretrain, "generator").exists()
    assert "gmp.loss_final" in parse_metrics(run_dir.metrics / "pretrain.txt")


def test_formal_schedule(tiny_dataset, pretrained, tmp_path):
    run_dir = RunDirectory(tmp_path)
    state = run_formal_training(tiny_dataset, *pretrained, tiny_run_config(), run_dir)
    assert [record["updates"] for record in state.history] == [0, 2, 4]
    assert state.rollouts == 3
    assert state.finetune_steps == 3 * 2
    assert len(state.buffer) == 3 * 2 * 30

    lines = run_dir.log_file.read_text(encoding="utf-8").splitlines()
    assert [line.split()[0] for line in lines] == ["epoch=1", "epoch=2", "epoch=3"]
    assert "dqn_loss=-" in lines[0]

    assert not run_dir.checkpoint(run_dir.epoch_dir(1), "replay").exists()
    assert run_dir.checkpoint(run_dir.epoch_dir(3), "replay").exists()
    assert run_dir.latest_epoch() == 3
    assert run_dir.checkpoint(run_dir.final, "policy").exists()


def test_no_updates_during_warmup(tiny_dataset, pretrained):
    state = run_formal_training(tiny_dataset, *pretrained, tiny_run_config(**{"train.n_s": "3"}))
    assert state.updates == 0
    assert state.finetune_steps == 6


def test_gmp_drift_is_detected(tiny_dataset, pretrained, monkeypatch):
    original = pipeline.load_gmp

    def drifting(config, params):
        gmp = original(config, params)
        with torch.no_grad():
            next(iter(gmp.parameters())).add_(1.0)
        return gmp

    monkeypatch.setattr(pipeline, "load_gmp", drifting)
    with pytest.raises(ContractViolation):
        run_formal_training(tiny_dataset, *pretrained, tiny_run_config(**{"train.epochs": "1"}))


def test_resume_matches_uninterrupted_run(tiny_dataset, pretrained, tmp_path, monkeypatch):
    config = tiny_run_config()
    straight = run_formal_training(tiny_dataset, *pretrained, config, RunDirectory(tmp_path / "a"))

    original = pipeline.train_step
    calls = []

    def interrupted(*args):
        calls.append(1)
        if len(calls) == 2 * config.train.n_ft + 1:
            raise RuntimeError("interrupted")
        return original(*args)

    monkeypatch.setattr(pipeline, "train_step", interrupted)
    run_dir = RunDirectory(tmp_path / "b")
    with pytest.raises(RuntimeError):
        run_formal_training(tiny_dataset, *pretrained, config, run_dir)
    assert run_dir.latest_epoch() == 2

    monkeypatch.setattr(pipeline, "train_step", original)
    resumed = run_formal_training(tiny_dataset, *pretrained, config, run_dir)
    assert resumed.epoch == 3
    assert resumed.updates == straight.updates
    assert ParamSet.from_module(resumed.generator).digest() == ParamSet.from_module(straight.generator).digest()
    assert resumed.agent.policy_params().digest() == straight.agent.policy_params().digest()
    assert torch.equal(resumed.buffer.contents().rewards, straight.buffer.contents().rewards)


def test_unknown_ablation(tiny_dataset, trained_run):
    with pytest.raises(UsageError):
        run_ablation("oracle", tiny_dataset, tiny_run_config(), trained_run)


def test_ablation_needs_pretrained_checkpoints(tiny_dataset, tmp_path):
    with pytest.raises(MissingPrerequisiteError):
        run_ablation("full+soft", tiny_dataset, tiny_run_config(), RunDirectory(tmp_path))


def test_true_graph_reference(tiny_dataset, trained_run):
    values = run_ablation("true+soft", tiny_dataset, tiny_run_config(), trained_run)
    assert values["relation.accuracy"] == 1.0
    assert values["test.mse_final"] == values["test.mse.t3"]
    assert (trained_run.metrics / "true_soft.txt").exists()


def test_full_graph_reference(tiny_dataset, trained_run):
    values = run_ablation("full+soft", tiny_dataset, tiny_run_config(), trained_run)
    assert values["relation.recall"] == 1.0
    assert values["relation.precision"] == pytest.approx(0.2)
    assert values["reference.all_edges.precision"] == pytest.approx(0.2)
    assert np.isfinite(values["test.min_ade"])


def test_supervised_reference(tiny_dataset, trained_run):
    values = run_ablation("supervised", tiny_dataset, tiny_run_config(), trained_run)
    assert 0.0 <= values["relation.accuracy"] <= 1.0
    assert np.isfinite(values["classifier.loss_final"])
    assert trained_run.checkpoint(trained_run.ablation_dir("supervised"), "classifier").exists()


def test_hybrid_ablations(tiny_dataset, trained_run):
    static = run_ablation("hybrid_static", tiny_dataset, tiny_run_config(), trained_run)
    dynamic = run_ablation("hybrid_dynamic", tiny_dataset, tiny_run_config(), trained_run)
    assert 0.0 <= static["relation.f1"] <= 1.0
    assert 0.0 <= static["test.miss_rate"] <= 1.0
    assert len(dynamic["test.predictions_sha256"]) == 64


def test_full_horizon_dynamic_equals_static(tiny_dataset, trained_run):
    config = tiny_run_config()
    static = run_evaluation(tiny_dataset, config, trained_run, "static")
    dynamic = run_evaluation(tiny_dataset, config, trained_run, "dynamic", tau=config.gen.horizon)
    assert static["test.predictions_sha256"] == dynamic["test.predictions_sha256"]
    assert (trained_run.metrics / "evaluate_dynamic_tau3.txt").exists()


def test_evaluation_artifacts(tiny_dataset, trained_run):
    run_evaluation(tiny_dataset, tiny_run_config(), trained_run, "dynamic", tau=1)
    curve = (trained_run.metrics / "mse_curve_dynamic_tau1.txt").read_text(encoding="utf-8").splitlines()
    assert curve[0].split()[:2] == ["step", "hybrid"]
    assert len(curve) == 1 + 3

    text = (trained_run.metrics / "attention_dynamic_tau1" / "case_000.txt").read_text(encoding="utf-8")
    sections = {block.splitlines()[0]: block.splitlines()[1:] for block in text.strip().split("\n\n")}
    hard = np.array([[int(v) for v in row.split()] for row in sections["# hard_mask"]])
    assert hard.shape == (6, 6)
    assert (np.diag(hard) == 0).all()
    assert not (trained_run.metrics / "attention_dynamic_tau1" / "case_002.txt").exists()

    metrics = parse_metrics(trained_run.metrics / "evaluate_dynamic_tau1.txt")
    assert metrics["mode"] == "dynamic"
    assert metrics["tau"] == "1"
    assert metrics["scale"] == "desk"
    assert "relation.accuracy" in metrics


def test_evaluation_without_run(tiny_dataset, tmp_path):
    with pytest.raises(MissingPrerequisiteError):
        run_evaluation(tiny_dataset, tiny_run_config(), RunDirectory(tmp_path / "missing"))


def test_stage_all_reuses_pretrain_checkpoints(tiny_dataset, tmp_path, monkeypatch):
    config = tiny_run_config(**{"train.epochs": "1"})
    run_dir = RunDirectory(tmp_path)
    run_all(tiny_dataset, config, run_dir, "pretrain")
    gmp_params, generator_params = load_pretrained(run_dir)

    def retrain(*args, **kwargs):
        raise AssertionError("pretraining ran again")

    monkeypatch.setattr(pipeline, "run_pretraining", retrain)
    run_all(tiny_dataset, config, run_dir, "all")
    assert run_dir.latest_epoch() == 1
    assert run_dir.checkpoint(run_dir.final, "policy").exists()
    reloaded = load_pretrained(run_dir)
    assert reloaded[0].digest() == gmp_params.digest()
    assert reloaded[1].digest() == generator_params.digest()


def test_checkpoint_dir_setting(tiny_dataset, tmp_path):
    config = tiny_run_config(**{"train.checkpoint_dir": "mine"})
    run_dir = RunDirectory.for_config(tmp_path, config)
    run_all(tiny_dataset, config, run_dir, "pretrain")
    assert (tmp_path / "mine" / "pretrain" / "gmp.rnck").exists()
    assert not (tmp_path / "checkpoints").exists()
