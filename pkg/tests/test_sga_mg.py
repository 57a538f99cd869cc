import struct
from dataclasses import replace

import numpy as np
import pytest
import torch

from rain.config import GeneratorConfig, OptimizerSpec
from rain.errors import ContractViolation, TrainingDivergedError
from rain.learners import build_optimizer, grad_check, seeded_init
from rain.models.sga_mg import (
    ConstantGraphs,
    MotionGenerator,
    PairScorer,
    batch_loss,
    fc_provider,
    fc_source,
    fully_connected,
    generator_loss,
    predict,
    predict_batch,
    train_generator,
    train_step,
    truth_source,
)

CONFIG = GeneratorConfig(n_heads=2, hidden=8, k_samples=3, tau=3, burn_in=4, horizon=3)


def small_generator(seed: int = 0) -> MotionGenerator:
    with seeded_init(seed, "generator"):
        return MotionGenerator(hidden=8, n_heads=2, context_dim=4)


def history(n: int = 5, batch: int = None, seed: int = 0) -> torch.Tensor:
    shape = (n, 4, 4) if batch is None else (batch, n, 4, 4)
    return torch.randn(*shape, generator=torch.Generator().manual_seed(seed))


class CountingProvider:
    def __init__(self, graph):
        self.graph = graph
        self.windows = []

    def __call__(self, window):
        self.windows.append(window.clone())
        return self.graph.expand(window.shape[0], -1, -1)


def test_single_neighbor_takes_all_weight():
    generator = small_generator()
    graph = torch.zeros(1, 3, 3, dtype=torch.int8)
    graph[0, 0, 2] = 1
    v = torch.randn(1, 3, 8)
    _, weights = generator.soft_attention(v, torch.randn(1, 3, 8), graph)
    assert (weights[0, :, 0, 2] == 1.0).all()
    assert weights[0, :, 0].sum() == weights[0, :, 0, 2].sum()


def test_empty_neighborhood_has_no_weights():
    generator = small_generator()
    graph = torch.zeros(1, 3, 3, dtype=torch.int8)
    v_social, weights = generator.soft_attention(torch.randn(1, 3, 8), torch.randn(1, 3, 8), graph)
    assert (weights == 0).all()
    expected = generator.f_v(torch.zeros(1, 3, 8))
    torch.testing.assert_close(v_social, expected)


def test_weights_normalize_over_selected_neighbors():
    generator = small_generator()
    graph = fully_connected(2, 4)
    graph[0, 1, :] = 0
    _, weights = generator.soft_attention(torch.randn(2, 4, 8), torch.randn(2, 4, 8), graph)
    sums = weights.sum(dim=-1)
    torch.testing.assert_close(sums[1], torch.ones(2, 4))
    assert (sums[0, :, 1] == 0).all()
    assert (weights * (1 - graph.unsqueeze(1)) == 0).all()


def test_self_edges_are_rejected():
    generator = small_generator()
    graph = torch.ones(1, 3, 3, dtype=torch.int8)
    with pytest.raises(ContractViolation):
        generator.soft_attention(torch.randn(1, 3, 8), torch.randn(1, 3, 8), graph)


def test_mismatched_graph_is_rejected():
    generator = small_generator()
    with pytest.raises(ContractViolation):
        generator.soft_attention(torch.randn(1, 3, 8), torch.randn(1, 3, 8), fully_connected(1, 4))


def test_identical_agents_embed_identically():
    generator = small_generator()
    x = torch.randn(1, 1, 4).expand(1, 3, 4)
    hidden, _ = generator.initial_hidden(1, 3, x)
    v_self, v_neighbor, _ = generator.embed_step(x, hidden)
    torch.testing.assert_close(v_self[0, 0], v_self[0, 2])
    torch.testing.assert_close(v_neighbor[0, 1], v_neighbor[0, 2])


def test_zero_parameters_give_zero_embeddings():
    generator = small_generator()
    with torch.no_grad():
        for p in generator.e_lstm_self.parameters():
            p.zero_()
    x = torch.randn(2, 3, 4)
    hidden, _ = generator.initial_hidden(2, 3, x)
    v_self, _, _ = generator.embed_step(x, hidden)
    assert (v_self == 0).all()


def test_zero_update_keeps_state():
    generator = small_generator()
    with torch.no_grad():
        generator.delta.weight.zero_()
        generator.delta.bias.zero_()
    x = torch.randn(1, 3, 4)
    _, g_hidden = generator.initial_hidden(1, 3, x)
    x_next, _ = generator.generate_step(torch.randn(1, 3, 8 + 8 + 4), g_hidden, x)
    assert torch.equal(x_next, x)


def test_prediction_bundle_shapes():
    bundle = predict(history(), fc_provider, CONFIG, small_generator(), k_samples=3)
    assert bundle.samples.shape == (3, 5, 3, 4)
    assert bundle.masks.shape == (1, 3, 5, 5)
    assert bundle.weights.shape == (3, 3, 2, 5, 5)


def test_noise_free_samples_are_identical():
    bundle = predict(history(), fc_provider, CONFIG, small_generator(), noise_cov=(0, 0, 0, 0), k_samples=4)
    for k in range(1, 4):
        np.testing.assert_array_equal(bundle.samples[k], bundle.samples[0])


def test_noisy_samples_differ_and_repeat_under_seed():
    noisy = dict(noise_cov=(0.01, 0.01, 0.01, 0.01), k_samples=3, seed=2)
    first = predict(history(), fc_provider, CONFIG, small_generator(), **noisy)
    second = predict(history(), fc_provider, CONFIG, small_generator(), **noisy)
    assert not np.array_equal(first.samples[0], first.samples[1])
    np.testing.assert_array_equal(first.samples, second.samples)


def test_full_horizon_refresh_matches_static():
    generator = small_generator()
    graph = fully_connected(1, 5)
    graph[0, 0, 1] = 0
    static = CountingProvider(graph)
    refreshed = CountingProvider(graph)
    one = predict(history(), static, CONFIG, generator)
    every_step = predict(history(), refreshed, replace(CONFIG, tau=1), generator)
    assert len(static.windows) == 1
    assert len(refreshed.windows) == 3
    np.testing.assert_array_equal(one.samples, every_step.samples)
    np.testing.assert_array_equal(one.weights, every_step.weights)


def test_refresh_window_slides_over_predictions():
    generator = small_generator()
    provider = CountingProvider(fully_connected(1, 5))
    h = history()
    bundle = predict(h, provider, replace(CONFIG, tau=1), generator)
    second = provider.windows[1][0]
    assert second.shape == (5, 4, 4)
    torch.testing.assert_close(second[:, :3], h[:, 1:])
    np.testing.assert_allclose(second[:, 3].numpy(), bundle.samples[0, :, 0], rtol=1e-6, atol=1e-6)
    assert bundle.masks.shape[0] == 3


def test_prediction_is_permutation_equivariant():
    generator = small_generator()
    h = history(6)
    graph = fully_connected(1, 6)
    graph[0, 2, 4] = graph[0, 5, 0] = 0
    perm = torch.tensor([2, 0, 1, 5, 3, 4])
    base = predict(h, ConstantGraphs(graph), CONFIG, generator, k_samples=1)
    permuted_graph = graph[:, perm][:, :, perm]
    moved = predict(h[perm], ConstantGraphs(permuted_graph), CONFIG, generator, k_samples=1)
    np.testing.assert_allclose(moved.samples[0], base.samples[0][perm.numpy()], rtol=1e-4, atol=1e-5)


def test_batch_prediction_matches_single_cases():
    generator = small_generator()
    batch = history(batch=2)
    samples, _, _ = predict_batch(batch, fc_provider, CONFIG, generator, k_samples=1)
    single = predict(batch[1], fc_provider, CONFIG, generator, k_samples=1)
    np.testing.assert_allclose(samples[1], single.samples, rtol=1e-5, atol=1e-6)


def test_history_length_must_match_burn_in():
    with pytest.raises(ContractViolation):
        predict(torch.zeros(5, 3, 4), fc_provider, CONFIG, small_generator())


def test_generator_loss_values():
    x = torch.randn(2, 3, 5, 4)
    assert generator_loss(x, x).item() == 0.0
    assert generator_loss(torch.zeros(1, 2, 3, 4), torch.full((1, 2, 3, 4), 0.5)).item() == pytest.approx(1.0)


def test_generator_gradients():
    generator = small_generator().double()
    gen = torch.Generator().manual_seed(5)
    h = torch.randn(2, 4, 4, 4, dtype=torch.float64, generator=gen)
    f = torch.randn(2, 4, 3, 4, dtype=torch.float64, generator=gen)
    graphs = fully_connected(2, 4)
    graphs[0, 0, 3] = 0
    error = grad_check(lambda: batch_loss(generator, h, f, graphs), list(generator.parameters()), coordinates=48)
    assert error < 1e-4


def test_attention_scorer_gradients():
    with seeded_init(1, "scorer"):
        scorer = PairScorer(8, 2).double()
    gen = torch.Generator().manual_seed(6)
    a = torch.randn(4, 8, dtype=torch.float64, generator=gen)
    b = torch.randn(4, 8, dtype=torch.float64, generator=gen)
    error = grad_check(lambda: (scorer(a, b) ** 2).sum(), list(scorer.parameters()), coordinates=48)
    assert error < 1e-4


def test_train_step_rejects_non_finite_loss():
    generator = small_generator()
    optimizer = build_optimizer(OptimizerSpec(), generator.parameters())
    future = torch.full((1, 3, 3, 4), float("nan"))
    with pytest.raises(TrainingDivergedError):
        train_step(generator, optimizer, torch.randn(1, 3, 4, 4), future, fully_connected(1, 3))


def test_training_lowers_loss(tiny_dataset):
    train = tiny_dataset.load("train")
    generator = small_generator()
    params, losses = train_generator(train, fc_source, generator, tiny_dataset.normalizer, CONFIG,
                                     OptimizerSpec(learning_rate=3e-3, batch_size=5), epochs=10, seed=0)
    assert len(losses) == 11
    assert losses[-1] < losses[0]
    assert params.version == 0


def test_truth_source_indexes_cases(tiny_dataset):
    train = tiny_dataset.load("train")
    source = truth_source(train)
    graphs = source(np.array([3, 1]), torch.zeros(2, 6, 4, 4))
    np.testing.assert_array_equal(graphs[0].numpy(), train[3].truth_graph)
    np.testing.assert_array_equal(graphs[1].numpy(), train[1].truth_graph)


def test_bundle_export(tmp_path):
    bundle = predict(history(), fc_provider, CONFIG, small_generator(), k_samples=2)
    binary, sidecar = bundle.export(tmp_path, "case_000")
    raw = binary.read_bytes()
    magic, k, n, t = struct.unpack_from("<4sIII", raw)
    assert (magic, k, n, t) == (b"RAIN", 2, 5, 3)
    assert len(raw) == 16 + 4 * 2 * 5 * 3 * 4
    text = sidecar.read_text(encoding="utf-8")
    assert text.startswith("# hard mask block 0\n0 1 1 1 1\n")
