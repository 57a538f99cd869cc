import numpy as np
import torch

from rain.config import OptimizerSpec
from rain.learners import seeded_init
from rain.models.gmp import GraphMessagePassing, standardized_histories
from rain.models.supervised import EdgeClassifier, classify_edges, edge_dataset, train_edge_classifier


def small_gmp() -> GraphMessagePassing:
    with seeded_init(0, "gmp"):
        return GraphMessagePassing(history_steps=4, hidden=8).requires_grad_(False)


def test_edge_dataset_labels_follow_truth(tiny_dataset):
    train = tiny_dataset.load("train")
    obs, labels = edge_dataset(train, small_gmp(), tiny_dataset.normalizer)
    assert obs.shape == (10 * 30, 17)
    assert (obs[:, -1] == 1).all()
    assert labels.sum().item() == 10 * 6


def test_classifier_training(tiny_dataset):
    train = tiny_dataset.load("train")
    gmp = small_gmp()
    with seeded_init(0, "classifier"):
        classifier = EdgeClassifier(17, 16)
    classifier, losses = train_edge_classifier(train, gmp, tiny_dataset.normalizer,
                                               OptimizerSpec(learning_rate=3e-3), epochs=8, seed=0,
                                               classifier=classifier)
    assert len(losses) == 8
    assert losses[-1] < losses[0]

    history = standardized_histories(tiny_dataset.load("test"), tiny_dataset.normalizer, 4)
    graphs = classify_edges(classifier, gmp, history)
    assert graphs.shape == (4, 6, 6)
    assert graphs.dtype == np.int8
    assert (np.diagonal(graphs, axis1=1, axis2=2) == 0).all()


def test_confident_classifier_selects_everything():
    gmp = small_gmp()
    classifier = EdgeClassifier(17, 4)
    with torch.no_grad():
        classifier.net.layers[-1].weight.zero_()
        classifier.net.layers[-1].bias.fill_(3.0)
    graphs = classify_edges(classifier, gmp, torch.randn(2, 5, 4, 4))
    assert graphs.sum() == 2 * 20
