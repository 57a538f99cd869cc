"""Bounded FIFO replay buffer for edge transitions."""

import logging
from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np
import torch

from ..errors import ContractViolation
from ..learners.params import ParamSet

logger = logging.getLogger(__name__)
logger.setLevel(logging.DEBUG)


@dataclass
class Transition:
    obs: torch.Tensor
    action: int
    reward: float
    next_obs: torch.Tensor
    done: bool


@dataclass
class TransitionBatch:
    """Column-stacked transitions; ``obs``/``next_obs`` are [B, obs_dim] float32."""

    obs: torch.Tensor
    actions: torch.Tensor
    rewards: torch.Tensor
    next_obs: torch.Tensor
    dones: torch.Tensor

    def __len__(self) -> int:
        return len(self.actions)

    def __iter__(self) -> Iterator[Transition]:
        for k in range(len(self)):
            yield Transition(
                obs=self.obs[k],
                action=int(self.actions[k]),
                reward=float(self.rewards[k]),
                next_obs=self.next_obs[k],
                done=bool(self.dones[k]),
            )

    @classmethod
    def concat(cls, batches) -> "TransitionBatch":
        batches = list(batches)
        return cls(*(torch.cat([getattr(b, name) for b in batches]) for name in
                     ("obs", "actions", "rewards", "next_obs", "dones")))


class ReplayBuffer:
    """Ring buffer; once full, each insertion evicts the oldest transition."""

    def __init__(self, capacity: int, obs_dim: int):
        if capacity < 1:
            raise ContractViolation(f"replay capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.obs_dim = obs_dim
        self._obs = torch.zeros(capacity, obs_dim)
        self._next_obs = torch.zeros(capacity, obs_dim)
        self._actions = torch.zeros(capacity, dtype=torch.long)
        self._rewards = torch.zeros(capacity)
        self._dones = torch.zeros(capacity)
        self._episodes = torch.zeros(capacity, dtype=torch.long)
        self._cursor = 0
        self._size = 0
        self.inserted = 0
        self.episodes_added = 0

    def __len__(self) -> int:
        return self._size

    def add_episode(self, batch: TransitionBatch) -> None:
        """Append every transition of one rollout, in order."""
        if batch.obs.shape[-1] != self.obs_dim:
            raise ContractViolation(f"observation width {batch.obs.shape[-1]} != buffer width {self.obs_dim}")
        if not torch.isfinite(batch.rewards).all():
            raise ContractViolation("transition rewards must be finite")
        episode = self.episodes_added
        for k in range(len(batch)):
            slot = self._cursor
            self._obs[slot] = batch.obs[k]
            self._next_obs[slot] = batch.next_obs[k]
            self._actions[slot] = batch.actions[k]
            self._rewards[slot] = batch.rewards[k]
            self._dones[slot] = batch.dones[k]
            self._episodes[slot] = episode
            self._cursor = (self._cursor + 1) % self.capacity
            self._size = min(self._size + 1, self.capacity)
        self.inserted += len(batch)
        self.episodes_added += 1

    def _order(self) -> torch.Tensor:
        """Slot indices from oldest to newest."""
        start = self._cursor if self._size == self.capacity else 0
        return (torch.arange(self._size) + start) % self.capacity

    def _gather(self, slots: torch.Tensor) -> TransitionBatch:
        return TransitionBatch(
            obs=self._obs[slots].clone(),
            actions=self._actions[slots].clone(),
            rewards=self._rewards[slots].clone(),
            next_obs=self._next_obs[slots].clone(),
            dones=self._dones[slots].clone(),
        )

    def contents(self) -> TransitionBatch:
        return self._gather(self._order())

    def sample(self, batch_size: int, rng: np.random.Generator) -> Optional[TransitionBatch]:
        """Uniform minibatch without replacement; None while the buffer is too small."""
        if self._size < batch_size:
            return None
        picks = rng.choice(self._size, size=batch_size, replace=False)
        return self._gather(self._order()[torch.as_tensor(picks)])

    def sample_episode(self, rng: np.random.Generator) -> Optional[TransitionBatch]:
        """All retained transitions of one uniformly chosen rollout."""
        if not self._size:
            return None
        order = self._order()
        episodes = self._episodes[order]
        chosen = rng.choice(torch.unique(episodes).numpy())
        return self._gather(order[episodes == int(chosen)])

    def state(self) -> ParamSet:
        order = self._order()
        tensors = OrderedDict([
            ("replay.obs", self._obs[order].clone()),
            ("replay.next_obs", self._next_obs[order].clone()),
            ("replay.actions", self._actions[order].float()),
            ("replay.rewards", self._rewards[order].clone()),
            ("replay.dones", self._dones[order].clone()),
            ("replay.episodes", self._episodes[order].float()),
            ("replay.counters", torch.tensor([self.inserted, self.episodes_added], dtype=torch.float64)),
        ])
        return ParamSet(tensors=tensors)

    @classmethod
    def from_state(cls, state: ParamSet, capacity: int) -> "ReplayBuffer":
        obs = state["replay.obs"]
        buffer = cls(capacity, obs.shape[-1])
        size = len(state["replay.actions"])
        if size > capacity:
            raise ContractViolation(f"stored buffer holds {size} transitions, capacity is {capacity}")
        if size:
            buffer._obs[:size] = obs
            buffer._next_obs[:size] = state["replay.next_obs"]
            buffer._actions[:size] = state["replay.actions"].long()
            buffer._rewards[:size] = state["replay.rewards"]
            buffer._dones[:size] = state["replay.dones"]
            buffer._episodes[:size] = state["replay.episodes"].long()
        buffer._size = size
        buffer._cursor = size % capacity
        inserted, episodes = state["replay.counters"].tolist()
        buffer.inserted, buffer.episodes_added = int(inserted), int(episodes)
        return buffer
