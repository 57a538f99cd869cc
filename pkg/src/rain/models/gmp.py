"""Graph message passing encoder and its autoencoder pretraining.

One round of attention-weighted aggregation over the fully connected graph
turns each agent's standardized history into a node encoding ``v_encoded``
that the hard-attention agent observes.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn
from tqdm import tqdm

from ..config import OptimizerSpec
from ..dataset.models import Normalizer, TrajectorySample
from ..errors import ContractViolation, TrainingDivergedError
from ..learners.layers import masked_softmax, three_layer
from ..learners.params import ParamSet, build_optimizer, substream
from ..utils.constants import CONTEXT_DIM, GMP_HIDDEN, HISTORY_STEPS, STATE_DIM

logger = logging.getLogger(__name__)
logger.setLevel(logging.DEBUG)


@dataclass
class NodeAttributes:
    """Per-agent attributes, each [..., N, 64]; ``alpha`` is [..., N, N]."""

    v_self: torch.Tensor
    v_neighbor: torch.Tensor
    v_social: torch.Tensor
    v_context: torch.Tensor
    v_encoded: torch.Tensor
    alpha: torch.Tensor


def off_diagonal_mask(n: int, device=None) -> torch.Tensor:
    return ~torch.eye(n, dtype=torch.bool, device=device)


class GraphMessagePassing(nn.Module):
    """Encoder over the fully connected agent graph.

    All agents share one type, so a single pair of state embeddings
    (``f_self``, ``f_neighbor``) is used.
    """

    def __init__(self, history_steps: int = HISTORY_STEPS, hidden: int = GMP_HIDDEN,
                 context_dim: int = CONTEXT_DIM):
        super().__init__()
        self.history_steps = history_steps
        self.hidden = hidden
        self.context_dim = context_dim
        flat = history_steps * STATE_DIM
        self.f_self = three_layer(flat, hidden, hidden)
        self.f_neighbor = three_layer(flat, hidden, hidden)
        self.scorer = three_layer(2 * hidden, hidden, 1)
        self.f_v = three_layer(hidden, hidden, hidden)
        self.f_enc = three_layer(2 * hidden + context_dim, hidden, hidden)

    def embed_nodes(self, history: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        if history.dim() < 3 or history.shape[-2:] != (self.history_steps, STATE_DIM):
            raise ContractViolation(
                f"history must end in ({self.history_steps}, {STATE_DIM}), got {tuple(history.shape)}"
            )
        flat = history.reshape(*history.shape[:-2], -1)
        return self.f_self(flat), self.f_neighbor(flat)

    def message_pass(self, v_self: torch.Tensor, v_neighbor: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        n = v_self.shape[-2]
        pairs = torch.cat([
            v_self.unsqueeze(-2).expand(*v_self.shape[:-1], n, v_self.shape[-1]),
            v_neighbor.unsqueeze(-3).expand(*v_neighbor.shape[:-2], n, n, v_neighbor.shape[-1]),
        ], dim=-1)
        logits = self.scorer(pairs).squeeze(-1)
        alpha = masked_softmax(logits, off_diagonal_mask(n, v_self.device).expand_as(logits))
        v_social = self.f_v(alpha @ v_neighbor)
        return v_social, alpha

    def context(self, v_self: torch.Tensor) -> torch.Tensor:
        """Context embedding stub: particles carry no context."""
        return v_self.new_zeros(*v_self.shape[:-1], self.context_dim)

    def encode(self, v_self: torch.Tensor, v_social: torch.Tensor, v_context: torch.Tensor) -> torch.Tensor:
        return self.f_enc(torch.cat([v_self, v_social, v_context], dim=-1))

    def forward(self, history: torch.Tensor) -> NodeAttributes:
        v_self, v_neighbor = self.embed_nodes(history)
        v_social, alpha = self.message_pass(v_self, v_neighbor)
        v_context = self.context(v_self)
        return NodeAttributes(
            v_self=v_self,
            v_neighbor=v_neighbor,
            v_social=v_social,
            v_context=v_context,
            v_encoded=self.encode(v_self, v_social, v_context),
            alpha=alpha,
        )


class HistoryDecoder(nn.Module):
    """Auxiliary decoder reconstructing the standardized history from ``v_encoded``."""

    def __init__(self, history_steps: int = HISTORY_STEPS, hidden: int = GMP_HIDDEN):
        super().__init__()
        self.history_steps = history_steps
        self.net = three_layer(hidden, hidden, history_steps * STATE_DIM)

    def forward(self, v_encoded: torch.Tensor) -> torch.Tensor:
        return self.net(v_encoded).reshape(*v_encoded.shape[:-1], self.history_steps, STATE_DIM)


def reconstruction_loss(reconstruction: torch.Tensor, history: torch.Tensor) -> torch.Tensor:
    """Mean over agents and history steps of the squared state error."""
    return ((reconstruction - history) ** 2).sum(dim=-1).mean()


def standardized_histories(samples: Sequence[TrajectorySample], normalizer: Normalizer,
                           history_steps: int) -> torch.Tensor:
    stacked = np.stack([normalizer.standardize(s.history(history_steps)) for s in samples])
    return torch.as_tensor(stacked, dtype=torch.float32)


def encode_nodes(gmp: GraphMessagePassing, history: torch.Tensor) -> torch.Tensor:
    """``v_encoded`` of frozen GMP params, without building a graph."""
    with torch.no_grad():
        return gmp(history).v_encoded


def pretrain_autoencoder(
    samples: Sequence[TrajectorySample],
    gmp: GraphMessagePassing,
    normalizer: Normalizer,
    optimizer_spec: OptimizerSpec,
    epochs: int,
    seed: int,
    decoder: Optional[HistoryDecoder] = None,
    progress: bool = False,
) -> Tuple[ParamSet, List[float]]:
    """Train GMP as the encoder of a history autoencoder, then freeze it.

    Returns:
        tuple: (frozen GMP params, losses) where ``losses[0]`` is the training
        loss before the first update and ``losses[e]`` the mean loss of epoch e
    """
    histories = standardized_histories(samples, normalizer, gmp.history_steps)
    decoder = decoder or HistoryDecoder(gmp.history_steps, gmp.hidden)
    optimizer = build_optimizer(optimizer_spec, list(gmp.parameters()) + list(decoder.parameters()))

    def batch_loss(batch: torch.Tensor) -> torch.Tensor:
        return reconstruction_loss(decoder(gmp(batch).v_encoded), batch)

    with torch.no_grad():
        losses = [batch_loss(histories).item()]
    logger.info(f"GMP pretraining: {len(samples)} cases, {epochs} epochs, initial loss {losses[0]:.5f}")

    for epoch in tqdm(range(1, epochs + 1), desc="gmp", disable=not progress):
        order = substream(seed, "gmp_pretrain", epoch).permutation(len(histories))
        total, count = 0.0, 0
        for start in range(0, len(order), optimizer_spec.batch_size):
            batch = histories[order[start:start + optimizer_spec.batch_size]]
            loss = batch_loss(batch)
            if not torch.isfinite(loss):
                logger.error(f"GMP loss diverged at epoch {epoch}, batch offset {start}")
                raise TrainingDivergedError(
                    f"GMP reconstruction loss is {loss.item()} at epoch {epoch} "
                    f"(last epoch mean {losses[-1]:.5f})"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += loss.item() * len(batch)
            count += len(batch)
        losses.append(total / count)
        logger.debug(f"GMP epoch {epoch}: reconstruction loss {losses[-1]:.5f}")

    gmp.requires_grad_(False)
    gmp.eval()
    return ParamSet.from_module(gmp), losses
