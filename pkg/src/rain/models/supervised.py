"""Supervised edge classifier: the relation-recognition upper bound.

Edges are labelled from the ground-truth graph and classified from the same
observation the hard-attention agent sees on the fully connected graph.
"""

import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn
from tqdm import tqdm

from ..config import OptimizerSpec
from ..dataset.models import Normalizer, TrajectorySample
from ..errors import TrainingDivergedError
from ..learners.layers import three_layer
from ..learners.params import build_optimizer, substream
from ..utils.constants import Q_HIDDEN
from .gmp import GraphMessagePassing, encode_nodes, standardized_histories
from .rl_ha import OBS_DIM, build_observations, edge_index
from .sga_mg import fully_connected

logger = logging.getLogger(__name__)
logger.setLevel(logging.DEBUG)


class EdgeClassifier(nn.Module):
    def __init__(self, obs_dim: int = OBS_DIM, hidden: int = Q_HIDDEN):
        super().__init__()
        self.net = three_layer(obs_dim, hidden, 1)

    def forward(self, obs: torch.Tensor) -> torch.Tensor:
        return self.net(obs).squeeze(-1)


def edge_dataset(samples: Sequence[TrajectorySample], gmp: GraphMessagePassing,
                 normalizer: Normalizer) -> Tuple[torch.Tensor, torch.Tensor]:
    """Observations [S*E, obs_dim] on the fully connected graph and their 0/1 labels."""
    history = standardized_histories(samples, normalizer, gmp.history_steps)
    batch, n = history.shape[:2]
    obs = build_observations(encode_nodes(gmp, history), fully_connected(batch, n))
    rows, cols = edge_index(n)
    truth = torch.as_tensor(np.stack([s.truth_graph for s in samples]))
    labels = truth[:, rows, cols].to(torch.float32)
    return obs.reshape(-1, obs.shape[-1]), labels.reshape(-1)


def train_edge_classifier(
    samples: Sequence[TrajectorySample],
    gmp: GraphMessagePassing,
    normalizer: Normalizer,
    optimizer_spec: OptimizerSpec,
    epochs: int,
    seed: int,
    classifier: Optional[EdgeClassifier] = None,
    progress: bool = False,
) -> Tuple[EdgeClassifier, List[float]]:
    """Binary cross-entropy training over pooled directed edges.

    Returns:
        tuple: (trained classifier, mean loss per epoch)
    """
    obs, labels = edge_dataset(samples, gmp, normalizer)
    classifier = classifier or EdgeClassifier(obs.shape[-1])
    optimizer = build_optimizer(optimizer_spec, classifier.parameters())
    losses = []
    logger.info(f"Edge classifier: {len(labels)} edges, positive rate {labels.mean().item():.3f}")

    for epoch in tqdm(range(1, epochs + 1), desc="classifier", disable=not progress):
        order = torch.as_tensor(substream(seed, "edge_classifier", epoch).permutation(len(labels)))
        total = 0.0
        for start in range(0, len(order), optimizer_spec.batch_size):
            picks = order[start:start + optimizer_spec.batch_size]
            loss = F.binary_cross_entropy_with_logits(classifier(obs[picks]), labels[picks])
            if not torch.isfinite(loss):
                raise TrainingDivergedError(f"edge classifier loss is {loss.item()} at epoch {epoch}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += loss.item() * len(picks)
        losses.append(total / len(labels))
        logger.debug(f"Classifier epoch {epoch}: BCE {losses[-1]:.5f}")
    return classifier, losses


def classify_edges(classifier: EdgeClassifier, gmp: GraphMessagePassing, history: torch.Tensor) -> np.ndarray:
    """Predicted graphs [B, N, N] (int8) for standardized histories [B, N, T_h, 4]."""
    batch, n = history.shape[:2]
    with torch.no_grad():
        obs = build_observations(encode_nodes(gmp, history), fully_connected(batch, n))
        positive = classifier(obs) > 0
    graphs = torch.zeros(batch, n, n, dtype=torch.int8)
    rows, cols = edge_index(n)
    graphs[:, rows, cols] = positive.to(torch.int8)
    return graphs.numpy()
