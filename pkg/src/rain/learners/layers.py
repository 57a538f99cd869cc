"""Differentiable building blocks shared by every learned module."""

from typing import Mapping, Sequence, Tuple

import torch
import torch.nn.functional as F
from torch import nn

from ..errors import ContractViolation

Hidden = Tuple[torch.Tensor, torch.Tensor]


def mlp_forward(
    params: Mapping[str, torch.Tensor],
    x: torch.Tensor,
    layer_spec: Sequence[int],
    prefix: str = "",
) -> torch.Tensor:
    """Affine maps with rectifiers in between, read from named tensors.

    Layer ``k`` uses ``{prefix}layers.{k}.weight`` and ``{prefix}layers.{k}.bias``,
    the names ``MLP`` registers.
    """
    if x.shape[-1] != layer_spec[0]:
        raise ContractViolation(f"MLP input has width {x.shape[-1]}, layer spec expects {layer_spec[0]}")
    last = len(layer_spec) - 2
    for k in range(len(layer_spec) - 1):
        x = F.linear(x, params[f"{prefix}layers.{k}.weight"], params[f"{prefix}layers.{k}.bias"])
        if k < last:
            x = F.relu(x)
    return x


def _fan_in_uniform_(layer: nn.Linear) -> None:
    bound = 1.0 / layer.in_features ** 0.5
    nn.init.uniform_(layer.weight, -bound, bound)
    nn.init.uniform_(layer.bias, -bound, bound)


class MLP(nn.Module):
    """Feed-forward block; ``layer_spec`` lists widths from input to output."""

    def __init__(self, layer_spec: Sequence[int]):
        super().__init__()
        if len(layer_spec) < 2:
            raise ContractViolation(f"layer spec needs at least input and output widths, got {layer_spec}")
        self.layer_spec = tuple(int(w) for w in layer_spec)
        self.layers = nn.ModuleList(
            nn.Linear(a, b) for a, b in zip(self.layer_spec[:-1], self.layer_spec[1:])
        )
        for layer in self.layers:
            _fan_in_uniform_(layer)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.layer_spec[0]:
            raise ContractViolation(
                f"MLP input has width {x.shape[-1]}, layer spec expects {self.layer_spec[0]}"
            )
        last = len(self.layers) - 1
        for k, layer in enumerate(self.layers):
            x = layer(x)
            if k < last:
                x = F.relu(x)
        return x


def three_layer(n_in: int, hidden: int, n_out: int) -> MLP:
    return MLP((n_in, hidden, hidden, n_out))


def masked_softmax(logits: torch.Tensor, mask: torch.Tensor, dim: int = -1) -> torch.Tensor:
    """Softmax restricted to ``mask``; masked entries and empty rows are exactly 0."""
    mask = mask.bool()
    filled = logits.masked_fill(~mask, float("-inf"))
    peak = filled.amax(dim=dim, keepdim=True)
    peak = torch.where(torch.isfinite(peak), peak, torch.zeros_like(peak)).detach()
    weights = torch.exp(filled - peak) * mask
    total = weights.sum(dim=dim, keepdim=True)
    return weights / torch.where(total > 0, total, torch.ones_like(total))


def make_lstm_cell(n_in: int, hidden: int) -> nn.LSTMCell:
    cell = nn.LSTMCell(n_in, hidden)
    bound = 1.0 / hidden ** 0.5
    for tensor in cell.parameters():
        nn.init.uniform_(tensor, -bound, bound)
    return cell


def zero_hidden(cell: nn.LSTMCell, batch: int, like: torch.Tensor) -> Hidden:
    zeros = like.new_zeros(batch, cell.hidden_size)
    return zeros, zeros.clone()


def recurrent_step(cell: nn.LSTMCell, x: torch.Tensor, hidden: Hidden) -> Tuple[torch.Tensor, Hidden]:
    """One long short-term memory step; returns (output, (h', c'))."""
    h, c = hidden
    if x.shape[-1] != cell.input_size or h.shape[-1] != cell.hidden_size or c.shape != h.shape:
        raise ContractViolation(
            f"LSTM step got input {tuple(x.shape)} and hidden {tuple(h.shape)}/{tuple(c.shape)} "
            f"for cell {cell.input_size}->{cell.hidden_size}"
        )
    h, c = cell(x, (h, c))
    return h, (h, c)
