"""Reinforcement-learning hard attention over graph edges.

Every directed edge of the fully connected graph is an agent in a shared
edge-wise MDP. Its observation is the pair of GMP node encodings plus the
edge's current selection status; its actions keep or flip that status. All
edges of one RL-step share a reward computed from the motion generator's
prediction error with the resulting graph. A single Q-network, trained with
Double DQN, serves every edge.
"""

import copy
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..config import DQNConfig, OptimizerSpec, RewardSpec
from ..dataset.models import Normalizer, TrajectorySample
from ..errors import ContractViolation, RolloutAbortedError
from ..learners.layers import three_layer
from ..learners.params import ParamSet, build_optimizer
from ..utils.constants import EdgeAction, GMP_HIDDEN, POSITION_DIM, Q_HIDDEN
from .gmp import GraphMessagePassing, encode_nodes
from .replay import ReplayBuffer, TransitionBatch
from .sga_mg import ConstantGraphs, MotionGenerator, fully_connected

logger = logging.getLogger(__name__)
logger.setLevel(logging.DEBUG)

OBS_DIM = 2 * GMP_HIDDEN + 1

Binary = Union[int, np.ndarray, torch.Tensor]


@dataclass
class Case:
    """One standardized training case: history [N, T_h, 4], future [N, T_f, 4]."""

    history: torch.Tensor
    future: torch.Tensor
    truth_graph: np.ndarray

    @classmethod
    def from_sample(cls, sample: TrajectorySample, normalizer: Normalizer, burn_in: int,
                    horizon: int) -> "Case":
        states = torch.as_tensor(normalizer.standardize(sample.states[:, :burn_in + horizon]),
                                 dtype=torch.float32)
        return cls(history=states[:, :burn_in], future=states[:, burn_in:], truth_graph=sample.truth_graph)

    @property
    def n_agents(self) -> int:
        return self.history.shape[0]


@dataclass
class RolloutResult:
    transitions: Optional[TransitionBatch]
    final_graph: Optional[np.ndarray]
    baseline_reward: float
    rewards: List[float] = field(default_factory=list)
    regular_rewards: List[float] = field(default_factory=list)

    @property
    def final_regular_reward(self) -> float:
        return self.regular_rewards[-1] if self.regular_rewards else self.baseline_reward


def edge_index(n: int) -> Tuple[torch.Tensor, torch.Tensor]:
    """Row-major (receiver, sender) indices of the n(n-1) off-diagonal slots."""
    rows, cols = np.nonzero(~np.eye(n, dtype=bool))
    return torch.as_tensor(rows), torch.as_tensor(cols)


def apply_action(s_ij: Binary, action: Binary) -> Binary:
    """Stay keeps the status, flip toggles it."""
    for name, value in (("status", s_ij), ("action", action)):
        array = np.asarray(value.cpu() if isinstance(value, torch.Tensor) else value)
        if not np.isin(array, (0, 1)).all():
            raise ContractViolation(f"{name} must be binary, got {array}")
    return s_ij ^ action


def build_observations(v_encoded: torch.Tensor, selection: torch.Tensor) -> torch.Tensor:
    """Edge observations [..., E, 2*D+1] from node encodings [..., N, D] and selection [..., N, N]."""
    n = v_encoded.shape[-2]
    if selection.shape[-2:] != (n, n):
        raise ContractViolation(f"selection shape {tuple(selection.shape)} does not match {n} nodes")
    rows, cols = edge_index(n)
    status = selection[..., rows, cols].to(v_encoded.dtype).unsqueeze(-1)
    return torch.cat([v_encoded[..., rows, :], v_encoded[..., cols, :], status], dim=-1)


def regular_reward(pred: Union[np.ndarray, torch.Tensor], truth: Union[np.ndarray, torch.Tensor]) -> float:
    """Negative squared prediction error summed over horizon steps, averaged over agents."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ContractViolation(f"prediction shape {pred.shape} != truth shape {truth.shape}")
    if not (np.isfinite(pred).all() and np.isfinite(truth).all()):
        raise ContractViolation("regular_reward received non-finite states")
    return float(-((pred - truth) ** 2).sum() / pred.shape[0])


def improvement_reward(r_now: float, r_prev: float) -> int:
    if not (np.isfinite(r_now) and np.isfinite(r_prev)):
        raise ContractViolation(f"improvement_reward needs finite rewards, got {r_now} and {r_prev}")
    return int(np.sign(r_now - r_prev))


def total_reward(spec: RewardSpec, r_reg: float, r_imp: int, sti_fired: bool = False,
                 pun_fired: bool = False) -> float:
    if sti_fired and pun_fired:
        raise ContractViolation("stimulation and punishment cannot fire on the same step")
    return (
        r_reg
        + spec.beta_imp * r_imp
        + spec.beta_sti * spec.omega_s * float(sti_fired)
        - spec.beta_pun * spec.omega_p * float(pun_fired)
    )


def is_success(pred: np.ndarray, truth: np.ndarray, threshold: float) -> bool:
    """A case succeeds when every agent's final position error is within ``threshold``."""
    endpoint = np.linalg.norm(pred[:, -1, :POSITION_DIM] - truth[:, -1, :POSITION_DIM], axis=-1)
    return bool((endpoint <= threshold).all())


class QNetwork(nn.Module):
    """Shared edge Q-function: one value per edge action."""

    def __init__(self, obs_dim: int = OBS_DIM, hidden: int = Q_HIDDEN):
        super().__init__()
        self.net = three_layer(obs_dim, hidden, len(EdgeAction))

    def forward(self, obs: torch.Tensor) -> torch.Tensor:
        return self.net(obs)


def select_actions(q_network: QNetwork, obs: torch.Tensor, epsilon: float,
                   rng: Optional[np.random.Generator] = None) -> torch.Tensor:
    """Epsilon-greedy actions per edge; ties go to ``stay``."""
    with torch.no_grad():
        greedy = q_network(obs).argmax(dim=-1)
    if epsilon <= 0:
        return greedy
    if rng is None:
        raise ContractViolation("exploration needs a random generator")
    explore = torch.as_tensor(rng.random(greedy.shape) < epsilon)
    random_actions = torch.as_tensor(rng.integers(0, len(EdgeAction), size=greedy.shape))
    return torch.where(explore, random_actions, greedy)


def _predict_with_graph(generator: MotionGenerator, case: Case, graph: torch.Tensor) -> np.ndarray:
    try:
        with torch.no_grad():
            predictions, _, _ = generator.rollout(
                case.history.unsqueeze(0), ConstantGraphs(graph.unsqueeze(0)), case.future.shape[1]
            )
    except ContractViolation as e:
        raise RolloutAbortedError(f"generator rejected the selected graph: {e}")
    predictions = predictions[0].numpy()
    if not np.isfinite(predictions).all():
        raise RolloutAbortedError("generator produced non-finite predictions")
    return predictions


def rollout(
    case: Case,
    gmp: GraphMessagePassing,
    q_network: QNetwork,
    generator: MotionGenerator,
    spec: RewardSpec,
    epsilon: float,
    t_rl: int = 10,
    rng: Optional[np.random.Generator] = None,
) -> RolloutResult:
    """Run one episode of ``t_rl`` RL-steps from the fully connected selection.

    The fully connected prediction is the reference reward for the first
    improvement signal. Flips of one step are applied together and all edges of
    that step share its reward.

    Raises:
        RolloutAbortedError: the generator failed; nothing is emitted
    """
    if t_rl < 1:
        raise ContractViolation(f"t_rl must be >= 1, got {t_rl}")
    n = case.n_agents
    rows, cols = edge_index(n)
    future = case.future.numpy()
    v_encoded = encode_nodes(gmp, case.history.unsqueeze(0))[0]

    selection = fully_connected(1, n)[0]
    reference = _predict_with_graph(generator, case, selection)
    baseline = regular_reward(reference, future)
    previous = baseline
    previous_success = is_success(reference, future, spec.success_threshold)

    steps: List[TransitionBatch] = []
    result = RolloutResult(transitions=None, final_graph=None, baseline_reward=baseline)
    for eta in range(1, t_rl + 1):
        obs = build_observations(v_encoded, selection)
        actions = select_actions(q_network, obs, epsilon, rng)
        updated = selection.clone()
        updated[rows, cols] = apply_action(selection[rows, cols], actions.to(selection.dtype))
        predictions = _predict_with_graph(generator, case, updated)

        r_reg = regular_reward(predictions, future)
        r_imp = improvement_reward(r_reg, previous)
        sti = pun = False
        if spec.sti_pun_enabled:
            success = is_success(predictions, future, spec.success_threshold)
            sti = success and not previous_success
            pun = previous_success and not success
            previous_success = success
        reward = total_reward(spec, r_reg, r_imp, sti, pun)

        edges = len(rows)
        steps.append(TransitionBatch(
            obs=obs,
            actions=actions.long(),
            rewards=torch.full((edges,), reward),
            next_obs=build_observations(v_encoded, updated),
            dones=torch.full((edges,), float(eta == t_rl)),
        ))
        result.rewards.append(reward)
        result.regular_rewards.append(r_reg)
        logger.debug(f"RL-step {eta}: {int(updated.sum())} edges selected, R_reg={r_reg:.4f}, R={reward:.4f}")
        selection, previous = updated, r_reg

    result.transitions = TransitionBatch.concat(steps)
    result.final_graph = selection.numpy().astype(np.int8)
    return result


def infer_graphs(history: torch.Tensor, gmp: GraphMessagePassing, q_network: QNetwork,
                 t_rl: int = 10) -> torch.Tensor:
    """Greedy selections [B, N, N] for standardized histories [B, N, T_h, 4]."""
    batch, n = history.shape[:2]
    rows, cols = edge_index(n)
    v_encoded = encode_nodes(gmp, history)
    selection = fully_connected(batch, n)
    for _ in range(t_rl):
        actions = select_actions(q_network, build_observations(v_encoded, selection), 0.0)
        selection = selection.clone()
        selection[:, rows, cols] = apply_action(selection[:, rows, cols], actions.to(selection.dtype))
    return selection


def infer_graph(history: torch.Tensor, gmp: GraphMessagePassing, q_network: QNetwork,
                t_rl: int = 10) -> np.ndarray:
    """Greedy selection [N, N] for one standardized history [N, T_h, 4]."""
    return infer_graphs(history.unsqueeze(0), gmp, q_network, t_rl)[0].numpy()


class PolicyGraphs:
    """Graph provider backed by the greedy policy."""

    def __init__(self, gmp: GraphMessagePassing, q_network: QNetwork, t_rl: int = 10):
        self.gmp = gmp
        self.q_network = q_network
        self.t_rl = t_rl

    def __call__(self, window: torch.Tensor) -> torch.Tensor:
        return infer_graphs(window, self.gmp, self.q_network, self.t_rl)


def ddqn_targets(batch: TransitionBatch, q_network: QNetwork, target_network: QNetwork,
                 gamma: float) -> torch.Tensor:
    """y = r + gamma * (1 - done) * Q_target(o', argmax_a Q(o', a))."""
    with torch.no_grad():
        next_actions = q_network(batch.next_obs).argmax(dim=-1, keepdim=True)
        next_values = target_network(batch.next_obs).gather(-1, next_actions).squeeze(-1)
        return batch.rewards + gamma * (1.0 - batch.dones) * next_values


def td_loss(q_network: QNetwork, batch: TransitionBatch, targets: torch.Tensor) -> torch.Tensor:
    values = q_network(batch.obs).gather(-1, batch.actions.unsqueeze(-1)).squeeze(-1)
    return F.mse_loss(values, targets.to(values.dtype))


def ddqn_update(buffer: ReplayBuffer, q_network: QNetwork, target_network: QNetwork,
                optimizer: torch.optim.Optimizer, gamma: float, batch_size: int,
                rng: np.random.Generator, replay_mode: str = "transition") -> Optional[float]:
    """One squared-TD step on a replayed batch; None when the buffer cannot fill one."""
    if replay_mode == "episode":
        batch = buffer.sample_episode(rng) if len(buffer) >= batch_size else None
    else:
        batch = buffer.sample(batch_size, rng)
    if batch is None:
        return None
    loss = td_loss(q_network, batch, ddqn_targets(batch, q_network, target_network, gamma))
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return loss.item()


class DDQNAgent:
    """Online and target Q-networks with their optimizer, schedule and counters."""

    def __init__(self, config: DQNConfig, q_network: Optional[QNetwork] = None):
        config.validate()
        self.config = config
        self.q_network = q_network or QNetwork(hidden=config.hidden)
        self.target_network = copy.deepcopy(self.q_network).requires_grad_(False)
        self.optimizer = build_optimizer(OptimizerSpec(learning_rate=config.learning_rate), self.q_network.parameters())
        self.update_count = 0

    def epsilon(self, epoch: int, total_epochs: int) -> float:
        """Linear anneal from eps_start to eps_end over the first ``anneal_fraction`` of training."""
        span = max(1.0, self.config.anneal_fraction * total_epochs)
        progress = min(1.0, epoch / span)
        return self.config.eps_start + progress * (self.config.eps_end - self.config.eps_start)

    def update(self, buffer: ReplayBuffer, rng: np.random.Generator) -> Optional[float]:
        loss = ddqn_update(buffer, self.q_network, self.target_network, self.optimizer,
                           self.config.gamma, self.config.batch_size, rng, self.config.replay_mode)
        if loss is None:
            return None
        self.update_count += 1
        if self.update_count % self.config.target_sync == 0:
            self.sync_target()
        return loss

    def sync_target(self) -> None:
        self.target_network.load_state_dict(self.q_network.state_dict())
        logger.debug(f"Synced target network after {self.update_count} updates")

    def policy_params(self) -> ParamSet:
        return ParamSet.from_module(self.q_network)
