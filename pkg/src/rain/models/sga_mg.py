"""Soft-graph-attention LSTM motion generator.

Per time step, an embedding LSTM pair turns each agent's state into a self
attribute and a neighbor attribute, multi-head soft attention aggregates the
neighbor attributes over the selected (hard-attention) graph, and a generation
LSTM emits the state change that the additive system model applies.

Prediction runs a burn-in stage on true states and a free-running stage on the
generator's own outputs. In dynamic mode the graph is re-inferred every
``tau`` predicted steps from the latest ``burn_in``-long window.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn
from tqdm import tqdm

from ..config import GeneratorConfig, OptimizerSpec
from ..dataset.models import HEADER, Normalizer, TrajectorySample
from ..errors import ContractViolation, TrainingDivergedError
from ..learners.layers import Hidden, make_lstm_cell, masked_softmax, recurrent_step, three_layer, zero_hidden
from ..learners.params import ParamSet, build_optimizer, substream, torch_seed
from ..utils.constants import CONTEXT_DIM, DATASET_MAGIC, LSTM_HIDDEN, STATE_DIM
from ..utils.formatting import format_grid

logger = logging.getLogger(__name__)
logger.setLevel(logging.DEBUG)

# (window [B, N, T_h, 4]) -> selection [B, N, N]
GraphProvider = Callable[[torch.Tensor], torch.Tensor]
# (case indices, history [B, N, T_h, 4]) -> selection [B, N, N]
GraphSource = Callable[[np.ndarray, torch.Tensor], torch.Tensor]


@dataclass
class StepNodeAttributes:
    v_self: torch.Tensor
    v_neighbor: torch.Tensor
    v_social: torch.Tensor
    v_context: torch.Tensor

    def assembled(self) -> torch.Tensor:
        return torch.cat([self.v_self, self.v_social, self.v_context], dim=-1)


@dataclass
class PredictionBundle:
    """K sampled futures with the graphs and attention that produced them.

    Attributes:
        samples: [K, N, T_f, 4] standardized predicted states
        masks: [blocks, K, N, N] hard selections, one per re-inference block
        weights: [K, T_f, H, N, N] soft attention weights per predicted step
    """

    samples: np.ndarray
    masks: np.ndarray
    weights: np.ndarray

    def export(self, directory: Path, name: str) -> Tuple[Path, Path]:
        """Write samples as a flat float32 file and the attention weights as text grids."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        k, n, t = self.samples.shape[:3]
        binary = directory / f"{name}.bin"
        with open(binary, "wb") as f:
            f.write(HEADER.pack(DATASET_MAGIC, k, n, t))
            f.write(self.samples.astype("<f4").tobytes())
        sidecar = directory / f"{name}.attention.txt"
        blocks = [f"# hard mask block 0\n{format_grid(self.masks[0, 0])}"]
        for step in range(self.weights.shape[1]):
            blocks.append(f"# step {step} head-mean\n{format_grid(self.weights[0, step].mean(axis=0))}")
        sidecar.write_text("\n\n".join(blocks) + "\n", encoding="utf-8")
        return binary, sidecar


def _fan_in(tensor: torch.Tensor, fan_in: int) -> None:
    bound = 1.0 / fan_in ** 0.5
    nn.init.uniform_(tensor, -bound, bound)


class PairScorer(nn.Module):
    """Per-head three-layer MLP scoring ``[a_i || b_j]`` for every pair.

    The first affine map is split over the two halves of the concatenation so
    pair scores cost one projection per node.
    """

    def __init__(self, dim: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = dim // n_heads
        width = n_heads * self.head_dim
        self.query = nn.Linear(dim, width)
        self.key = nn.Linear(dim, width, bias=False)
        self.hidden_weight = nn.Parameter(torch.empty(n_heads, self.head_dim, self.head_dim))
        self.hidden_bias = nn.Parameter(torch.empty(n_heads, self.head_dim))
        self.out_weight = nn.Parameter(torch.empty(n_heads, self.head_dim))
        self.out_bias = nn.Parameter(torch.empty(n_heads))
        for tensor in (self.query.weight, self.query.bias, self.key.weight):
            _fan_in(tensor, 2 * dim)
        for tensor in (self.hidden_weight, self.hidden_bias, self.out_weight, self.out_bias):
            _fan_in(tensor, self.head_dim)

    def forward(self, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
        """Scores [..., H, N, N] for a, b of shape [..., N, dim]."""
        shape = a.shape[:-1] + (self.n_heads, self.head_dim)
        qa = self.query(a).reshape(shape)
        kb = self.key(b).reshape(shape)
        x = F.relu(qa.unsqueeze(-3) + kb.unsqueeze(-4))
        x = F.relu(torch.einsum("...ijhd,hde->...ijhe", x, self.hidden_weight) + self.hidden_bias)
        scores = torch.einsum("...ijhd,hd->...ijh", x, self.out_weight) + self.out_bias
        return scores.movedim(-1, -3)


class MotionGenerator(nn.Module):
    def __init__(self, hidden: int = LSTM_HIDDEN, n_heads: int = 4, context_dim: int = CONTEXT_DIM):
        super().__init__()
        if hidden % n_heads:
            raise ContractViolation(f"hidden size {hidden} does not split over {n_heads} heads")
        self.hidden = hidden
        self.n_heads = n_heads
        self.context_dim = context_dim
        self.e_lstm_self = make_lstm_cell(STATE_DIM, hidden)
        self.e_lstm_neighbor = make_lstm_cell(STATE_DIM, hidden)
        self.scorer = PairScorer(hidden, n_heads)
        self.f_v = three_layer(hidden, hidden, hidden)
        self.g_lstm = make_lstm_cell(2 * hidden + context_dim, hidden)
        self.delta = nn.Linear(hidden, STATE_DIM)
        _fan_in(self.delta.weight, hidden)
        _fan_in(self.delta.bias, hidden)

    @classmethod
    def from_config(cls, config: GeneratorConfig) -> "MotionGenerator":
        return cls(hidden=config.hidden, n_heads=config.n_heads)

    def soft_attention(self, v_self: torch.Tensor, v_neighbor: torch.Tensor,
                       graph: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """Masked multi-head attention over selected in-neighbors.

        Returns:
            tuple: (v_social [..., N, hidden], weights [..., H, N, N])
        """
        n = v_self.shape[-2]
        if graph.shape[-2:] != (n, n):
            raise ContractViolation(f"graph shape {tuple(graph.shape)} does not match {n} agents")
        eye = torch.eye(n, dtype=torch.bool, device=graph.device)
        if (graph.bool() & eye).any():
            raise ContractViolation("selection graph must have a zero diagonal")
        mask = graph.bool().unsqueeze(-3)
        weights = masked_softmax(self.scorer(v_self, v_neighbor), mask.expand(*mask.shape[:-3], self.n_heads, n, n))
        aggregate = (weights @ v_neighbor.unsqueeze(-3)).mean(dim=-3)
        return self.f_v(aggregate), weights

    def embed_step(self, x_t: torch.Tensor, hidden: Tuple[Hidden, Hidden]):
        """One E-LSTM step for x_t [B, N, 4]; hidden states are [B*N, hidden]."""
        batch, n = x_t.shape[:2]
        flat = x_t.reshape(batch * n, STATE_DIM)
        v_self, h_self = recurrent_step(self.e_lstm_self, flat, hidden[0])
        v_neighbor, h_neighbor = recurrent_step(self.e_lstm_neighbor, flat, hidden[1])
        return (v_self.reshape(batch, n, -1), v_neighbor.reshape(batch, n, -1), (h_self, h_neighbor))

    def generate_step(self, v_bar: torch.Tensor, hidden: Hidden, x_t: torch.Tensor,
                      noise: Optional[torch.Tensor] = None) -> Tuple[torch.Tensor, Hidden]:
        """G-LSTM step and additive system update x_{t+1} = x_t + dx (+ noise)."""
        batch, n = v_bar.shape[:2]
        out, hidden = recurrent_step(self.g_lstm, v_bar.reshape(batch * n, -1), hidden)
        x_next = x_t + self.delta(out).reshape(batch, n, STATE_DIM)
        if noise is not None:
            x_next = x_next + noise
        return x_next, hidden

    def initial_hidden(self, batch: int, n: int, like: torch.Tensor):
        rows = batch * n
        return (
            (zero_hidden(self.e_lstm_self, rows, like), zero_hidden(self.e_lstm_neighbor, rows, like)),
            zero_hidden(self.g_lstm, rows, like),
        )

    def step(self, x_t: torch.Tensor, graph: torch.Tensor, hidden, noise: Optional[torch.Tensor] = None):
        """Full embed -> attend -> generate step."""
        e_hidden, g_hidden = hidden
        v_self, v_neighbor, e_hidden = self.embed_step(x_t, e_hidden)
        v_social, weights = self.soft_attention(v_self, v_neighbor, graph)
        attributes = StepNodeAttributes(v_self, v_neighbor, v_social, v_self.new_zeros(*v_self.shape[:-1], self.context_dim))
        x_next, g_hidden = self.generate_step(attributes.assembled(), g_hidden, x_t, noise)
        return x_next, weights, (e_hidden, g_hidden)

    def rollout(
        self,
        history: torch.Tensor,
        graph_provider: GraphProvider,
        horizon: int,
        tau: Optional[int] = None,
        noise_std: Optional[torch.Tensor] = None,
        noise_generator: Optional[torch.Generator] = None,
    ):
        """Burn in on ``history`` [B, N, T_h, 4] and predict ``horizon`` steps.

        Returns:
            tuple: (predictions [B, N, horizon, 4], masks list of [B, N, N],
            weights [B, horizon, H, N, N])
        """
        batch, n, burn_in = history.shape[:3]
        tau = tau or horizon
        if not 1 <= tau <= horizon:
            raise ContractViolation(f"tau={tau} must lie in [1, {horizon}]")
        hidden = self.initial_hidden(batch, n, history)
        graph = graph_provider(history)
        masks = [graph]

        for t in range(burn_in - 1):
            _, _, hidden = self.step(history[:, :, t], graph, hidden)

        x_t = history[:, :, burn_in - 1]
        predictions, weights = [], []
        for j in range(horizon):
            if j and j % tau == 0:
                window = torch.cat([history, torch.stack(predictions, dim=2)], dim=2)[:, :, -burn_in:]
                graph = graph_provider(window)
                masks.append(graph)
            noise = None
            if noise_std is not None:
                noise = torch.randn(x_t.shape, generator=noise_generator, dtype=x_t.dtype) * noise_std
            x_t, step_weights, hidden = self.step(x_t, graph, hidden, noise)
            predictions.append(x_t)
            weights.append(step_weights)
        return torch.stack(predictions, dim=2), masks, torch.stack(weights, dim=1)


def fully_connected(batch: int, n: int) -> torch.Tensor:
    graph = torch.ones(batch, n, n, dtype=torch.int8)
    graph[:, torch.arange(n), torch.arange(n)] = 0
    return graph


class ConstantGraphs:
    """Graph provider returning fixed per-case selections, repeated over samples."""

    def __init__(self, graphs: torch.Tensor):
        self.graphs = torch.as_tensor(graphs, dtype=torch.int8)

    def __call__(self, window: torch.Tensor) -> torch.Tensor:
        repeats = window.shape[0] // self.graphs.shape[0]
        return self.graphs.repeat_interleave(repeats, dim=0)


def fc_provider(window: torch.Tensor) -> torch.Tensor:
    return fully_connected(window.shape[0], window.shape[1])


def fc_source(indices: np.ndarray, history: torch.Tensor) -> torch.Tensor:
    return fully_connected(history.shape[0], history.shape[1])


def truth_source(samples: Sequence[TrajectorySample]) -> GraphSource:
    graphs = torch.as_tensor(np.stack([s.truth_graph for s in samples]), dtype=torch.int8)

    def source(indices: np.ndarray, history: torch.Tensor) -> torch.Tensor:
        return graphs[indices]

    return source


def predict(
    history: torch.Tensor,
    graph_provider: GraphProvider,
    config: GeneratorConfig,
    generator: MotionGenerator,
    noise_cov: Optional[Sequence[float]] = None,
    k_samples: Optional[int] = None,
    seed: int = 0,
) -> PredictionBundle:
    """Sample K futures for one case (``history`` [N, T_h, 4], standardized)."""
    if history.dim() != 3:
        raise ContractViolation(f"predict takes one case [N, T_h, 4], got {tuple(history.shape)}")
    samples, masks, weights = predict_batch(
        history.unsqueeze(0), graph_provider, config, generator, noise_cov, k_samples, seed
    )
    return PredictionBundle(samples=samples[0], masks=masks[0], weights=weights[0])


def predict_batch(
    history: torch.Tensor,
    graph_provider: GraphProvider,
    config: GeneratorConfig,
    generator: MotionGenerator,
    noise_cov: Optional[Sequence[float]] = None,
    k_samples: Optional[int] = None,
    seed: int = 0,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batched ``predict`` over cases ``history`` [B, N, T_h, 4].

    Returns:
        tuple: (samples [B, K, N, T_f, 4], masks [B, blocks, K, N, N],
        weights [B, K, T_f, H, N, N])
    """
    config.validate()
    noise_cov = tuple(config.noise_cov if noise_cov is None else noise_cov)
    k = config.k_samples if k_samples is None else k_samples
    batch, n = history.shape[:2]
    if history.shape[2] != config.burn_in:
        raise ContractViolation(f"history has {history.shape[2]} steps, config burn_in is {config.burn_in}")
    deterministic = not any(noise_cov)
    runs = 1 if deterministic else k
    expanded = history.repeat_interleave(runs, dim=0)
    noise_std = None if deterministic else torch.sqrt(torch.tensor(noise_cov, dtype=history.dtype))
    noise_generator = torch.Generator().manual_seed(torch_seed(seed, "generator_noise"))

    with torch.no_grad():
        preds, masks, weights = generator.rollout(
            expanded, graph_provider, config.horizon, config.tau, noise_std, noise_generator
        )
    preds = preds.reshape(batch, runs, n, config.horizon, STATE_DIM)
    weights = weights.reshape(batch, runs, *weights.shape[1:])
    masks = torch.stack(masks, dim=1).reshape(batch, runs, len(masks), n, n).transpose(1, 2)
    if deterministic and k > 1:
        preds = preds.expand(batch, k, *preds.shape[2:])
        weights = weights.expand(batch, k, *weights.shape[2:])
        masks = masks.expand(batch, masks.shape[1], k, n, n)
    return (
        preds.numpy().copy(),
        masks.to(torch.int8).numpy().copy(),
        weights.to(torch.float32).numpy().copy(),
    )


def generator_loss(predictions: torch.Tensor, future: torch.Tensor) -> torch.Tensor:
    """Mean over agents and horizon steps of the squared state error."""
    return ((predictions - future) ** 2).sum(dim=-1).mean()


def batch_loss(generator: MotionGenerator, history: torch.Tensor, future: torch.Tensor,
               graphs: torch.Tensor) -> torch.Tensor:
    predictions, _, _ = generator.rollout(history, ConstantGraphs(graphs), future.shape[2])
    return generator_loss(predictions, future)


def train_step(generator: MotionGenerator, optimizer: torch.optim.Optimizer, history: torch.Tensor,
               future: torch.Tensor, graphs: torch.Tensor) -> float:
    """One back-propagation update on a minibatch; raises on a non-finite loss."""
    loss = batch_loss(generator, history, future, graphs)
    if not torch.isfinite(loss):
        raise TrainingDivergedError(f"generator loss is {loss.item()}")
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return loss.item()


def stack_cases(samples: Sequence[TrajectorySample], normalizer: Normalizer, burn_in: int,
                horizon: int) -> Tuple[torch.Tensor, torch.Tensor]:
    """Standardized (history [S, N, T_h, 4], future [S, N, T_f, 4]) tensors."""
    states = np.stack([normalizer.standardize(s.states[:, :burn_in + horizon]) for s in samples])
    states = torch.as_tensor(states, dtype=torch.float32)
    return states[:, :, :burn_in], states[:, :, burn_in:]


def evaluate_loss(generator: MotionGenerator, history: torch.Tensor, future: torch.Tensor,
                  graphs: torch.Tensor, batch_size: int = 256) -> float:
    total = 0.0
    with torch.no_grad():
        for start in range(0, len(history), batch_size):
            part = slice(start, start + batch_size)
            loss = batch_loss(generator, history[part], future[part], graphs[part])
            total += loss.item() * len(history[part])
    return total / len(history)


def train_generator(
    samples: Sequence[TrajectorySample],
    graph_source: GraphSource,
    generator: MotionGenerator,
    normalizer: Normalizer,
    config: GeneratorConfig,
    optimizer_spec: OptimizerSpec,
    epochs: int,
    seed: int,
    optimizer: Optional[torch.optim.Optimizer] = None,
    progress: bool = False,
) -> Tuple[ParamSet, List[float]]:
    """Minimize the future-state MSE with ground-truth burn-in and no output noise.

    Returns:
        tuple: (trained params, losses) where ``losses[0]`` is the loss before
        training and ``losses[e]`` the mean minibatch loss of epoch e
    """
    history, future = stack_cases(samples, normalizer, config.burn_in, config.horizon)
    optimizer = optimizer or build_optimizer(optimizer_spec, generator.parameters())
    all_graphs = graph_source(np.arange(len(samples)), history)
    losses = [evaluate_loss(generator, history, future, all_graphs)]
    logger.info(f"Generator training: {len(samples)} cases, {epochs} epochs, initial loss {losses[0]:.5f}")

    for epoch in tqdm(range(1, epochs + 1), desc="generator", disable=not progress):
        order = substream(seed, "generator_train", epoch).permutation(len(samples))
        total, count = 0.0, 0
        for start in range(0, len(order), optimizer_spec.batch_size):
            indices = order[start:start + optimizer_spec.batch_size]
            graphs = graph_source(indices, history[indices])
            try:
                loss = train_step(generator, optimizer, history[indices], future[indices], graphs)
            except TrainingDivergedError as e:
                logger.error(f"Generator diverged at epoch {epoch}, batch offset {start}: {e}")
                raise TrainingDivergedError(f"{e} at epoch {epoch} (last epoch mean {losses[-1]:.5f})")
            total += loss * len(indices)
            count += len(indices)
        losses.append(total / count)
        logger.debug(f"Generator epoch {epoch}: loss {losses[-1]:.5f}")
    return ParamSet.from_module(generator), losses
