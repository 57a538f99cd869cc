import numpy as np
import torch

from rain.config import OptimizerSpec
from rain.dataset.models import Normalizer, TrajectorySample
from rain.learners import ParamSet, grad_check, seeded_init
from rain.models.gmp import (
    GraphMessagePassing,
    HistoryDecoder,
    encode_nodes,
    pretrain_autoencoder,
    reconstruction_loss,
    standardized_histories,
)


def small_gmp(seed: int = 0) -> GraphMessagePassing:
    with seeded_init(seed, "gmp"):
        return GraphMessagePassing(history_steps=4, hidden=8, context_dim=5)


def test_node_attribute_shapes():
    gmp = small_gmp()
    attributes = gmp(torch.randn(2, 6, 4, 4))
    assert attributes.v_encoded.shape == (2, 6, 8)
    assert attributes.v_context.shape == (2, 6, 5)
    assert attributes.alpha.shape == (2, 6, 6)


def test_message_weights_cover_other_agents_only():
    alpha = small_gmp()(torch.randn(3, 5, 4, 4)).alpha
    assert (torch.diagonal(alpha, dim1=-2, dim2=-1) == 0).all()
    torch.testing.assert_close(alpha.sum(dim=-1), torch.ones(3, 5))


def test_single_agent_has_an_empty_neighborhood():
    gmp = small_gmp()
    attributes = gmp(torch.randn(1, 1, 4, 4))
    assert torch.equal(attributes.alpha, torch.zeros(1, 1, 1))
    with torch.no_grad():
        torch.testing.assert_close(attributes.v_social, gmp.f_v(torch.zeros(1, 1, 8)))
    assert torch.isfinite(attributes.v_encoded).all()


def test_context_is_zero():
    assert (small_gmp()(torch.randn(1, 3, 4, 4)).v_context == 0).all()


def test_encoding_is_permutation_equivariant():
    gmp = small_gmp()
    history = torch.randn(1, 6, 4, 4)
    perm = torch.tensor([3, 0, 5, 1, 4, 2])
    encoded = encode_nodes(gmp, history)
    permuted = encode_nodes(gmp, history[:, perm])
    torch.testing.assert_close(permuted, encoded[:, perm], rtol=1e-5, atol=1e-5)


def test_reconstruction_gradients():
    gmp = small_gmp().double()
    with seeded_init(0, "decoder"):
        decoder = HistoryDecoder(4, 8).double()
    history = torch.randn(2, 4, 4, 4, dtype=torch.float64, generator=torch.Generator().manual_seed(3))
    params = list(gmp.parameters()) + list(decoder.parameters())
    error = grad_check(lambda: reconstruction_loss(decoder(gmp(history).v_encoded), history), params, coordinates=48)
    assert error < 1e-4


def test_pretraining_lowers_loss_and_freezes(tiny_dataset):
    train = tiny_dataset.load("train")
    gmp = small_gmp()
    params, losses = pretrain_autoencoder(train, gmp, tiny_dataset.normalizer, OptimizerSpec(learning_rate=3e-3),
                                          epochs=15, seed=1)
    assert len(losses) == 16
    assert losses[-1] < losses[0]
    assert not any(p.requires_grad for p in gmp.parameters())
    assert params.digest() == ParamSet.from_module(gmp).digest()


def test_pretraining_is_reproducible(tiny_dataset):
    train = tiny_dataset.load("train")
    digests = []
    for _ in range(2):
        with seeded_init(0, "decoder"):
            decoder = HistoryDecoder(4, 8)
        params, _ = pretrain_autoencoder(train, small_gmp(), tiny_dataset.normalizer, OptimizerSpec(),
                                         epochs=2, seed=4, decoder=decoder)
        digests.append(params.digest())
    assert digests[0] == digests[1]


def test_constant_single_agent_history_is_reconstructed():
    state = np.array([0.5, -0.3, 0.2, 0.1])
    case = TrajectorySample(states=np.tile(state, (1, 7, 1)), charges=np.zeros(1),
                            truth_graph=np.zeros((1, 1), dtype=np.int8))
    normalizer = Normalizer(mean=np.zeros(4), std=np.ones(4))
    with seeded_init(0, "decoder"):
        decoder = HistoryDecoder(4, 8)
    gmp = small_gmp()
    pretrain_autoencoder([case], gmp, normalizer, OptimizerSpec(learning_rate=1e-2, batch_size=1),
                         epochs=400, seed=2, decoder=decoder)
    history = standardized_histories([case], normalizer, 4)
    with torch.no_grad():
        loss = reconstruction_loss(decoder(gmp(history).v_encoded), history).item()
    assert loss <= 1e-2
