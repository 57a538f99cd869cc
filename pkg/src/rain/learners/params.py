"""Named parameter sets, optimizer construction and seeded random substreams."""

import hashlib
import zlib
from collections import OrderedDict
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Dict, Iterator, Tuple

import numpy as np
import torch
from torch import nn

from ..config import OptimizerSpec
from ..errors import ContractViolation


@dataclass(frozen=True)
class ParamSet:
    """Immutable named tensors plus a save version."""

    tensors: Dict[str, torch.Tensor] = field(default_factory=OrderedDict)
    version: int = 0

    @classmethod
    def from_module(cls, module: nn.Module, version: int = 0) -> "ParamSet":
        return cls(
            tensors=OrderedDict((k, v.detach().clone()) for k, v in module.state_dict().items()),
            version=version,
        )

    def load_into(self, module: nn.Module) -> nn.Module:
        module.load_state_dict(self.tensors)
        return module

    def validate(self) -> None:
        for name, tensor in self.tensors.items():
            if not torch.isfinite(tensor).all():
                raise ContractViolation(f"tensor '{name}' has non-finite values")

    def digest(self) -> str:
        """SHA-256 over names, shapes and float32 bytes."""
        h = hashlib.sha256()
        for name, tensor in self.tensors.items():
            h.update(name.encode("utf-8"))
            h.update(str(tuple(tensor.shape)).encode("ascii"))
            h.update(tensor.detach().cpu().to(torch.float32).numpy().astype("<f4").tobytes())
        return h.hexdigest()

    def __len__(self) -> int:
        return len(self.tensors)

    def __getitem__(self, name: str) -> torch.Tensor:
        return self.tensors[name]

    def items(self):
        return self.tensors.items()


def build_optimizer(spec: OptimizerSpec, parameters) -> torch.optim.Adam:
    spec.validate()
    return torch.optim.Adam(parameters, lr=spec.learning_rate, weight_decay=spec.weight_decay)


def optimizer_state(optimizer: torch.optim.Optimizer) -> ParamSet:
    """Flatten Adam moments and step counters into a ParamSet."""
    tensors = OrderedDict()
    for index, state in optimizer.state_dict()["state"].items():
        for key, value in state.items():
            tensors[f"{index}.{key}"] = torch.as_tensor(value, dtype=torch.float32).reshape(-1).clone()
    return ParamSet(tensors=tensors)


def load_optimizer_state(optimizer: torch.optim.Optimizer, state: ParamSet) -> None:
    current = optimizer.state_dict()
    restored: Dict[int, Dict[str, torch.Tensor]] = {}
    for name, tensor in state.items():
        index, key = name.split(".", 1)
        restored.setdefault(int(index), {})[key] = tensor
    shapes = [p.shape for group in optimizer.param_groups for p in group["params"]]
    for index, entry in restored.items():
        for key in ("exp_avg", "exp_avg_sq"):
            if key in entry:
                entry[key] = entry[key].reshape(shapes[index]).clone()
        if "step" in entry:
            entry["step"] = entry["step"].reshape(()).clone()
    current["state"] = restored
    optimizer.load_state_dict(current)


def _entropy(seed: int, name: str, extra: Tuple[int, ...]) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), zlib.crc32(name.encode("utf-8")), *map(int, extra)])


def substream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Named numpy random stream derived from the run seed."""
    return np.random.default_rng(_entropy(seed, name, extra))


def torch_seed(seed: int, name: str, *extra: int) -> int:
    return int(_entropy(seed, name, extra).generate_state(1)[0])


@contextmanager
def seeded_init(seed: int, name: str, *extra: int) -> Iterator[None]:
    """Run module construction under a named torch seed without touching the global stream."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(torch_seed(seed, name, *extra))
        yield
