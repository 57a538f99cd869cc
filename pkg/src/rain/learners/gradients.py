"""Finite-difference gradient checking."""

import logging
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from ..errors import ContractViolation

logger = logging.getLogger(__name__)
logger.setLevel(logging.DEBUG)


def grad_check(
    fn: Callable[[], torch.Tensor],
    params: Sequence[torch.Tensor],
    coordinates: Optional[int] = 64,
    step: float = 1e-5,
    seed: int = 0,
) -> float:
    """Compare autograd gradients of ``fn`` against central differences.

    Args:
        fn: closure returning a scalar computed from ``params``
        params: float64 leaf tensors with ``requires_grad``
        coordinates: number of coordinates to check, drawn with ``seed``; None checks all
        step: finite-difference step

    Returns:
        float: norm-wise relative error over the checked coordinates
    """
    params = [p for p in params if p.requires_grad]
    if not params:
        raise ContractViolation("grad_check needs at least one tensor with requires_grad")
    if any(p.dtype != torch.float64 for p in params):
        raise ContractViolation("grad_check requires float64 parameters")

    loss = fn()
    if loss.numel() != 1:
        raise ContractViolation(f"grad_check needs a scalar function, got shape {tuple(loss.shape)}")
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    grads = [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]

    sizes = np.array([p.numel() for p in params])
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    flat_indices = np.arange(total) if coordinates is None or coordinates >= total else rng.choice(total, coordinates, replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    analytic, numeric = [], []
    with torch.no_grad():
        for flat in flat_indices:
            which = int(np.searchsorted(offsets, flat, side="right") - 1)
            index = int(flat - offsets[which])
            values = params[which].view(-1)
            original = values[index].item()
            values[index] = original + step
            upper = fn().item()
            values[index] = original - step
            lower = fn().item()
            values[index] = original
            numeric.append((upper - lower) / (2 * step))
            analytic.append(grads[which].view(-1)[index].item())

    analytic, numeric = np.array(analytic), np.array(numeric)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    error = float(np.linalg.norm(analytic - numeric) / scale)
    logger.debug(f"grad_check over {len(flat_indices)} coordinates: relative error {error:.3e}")
    return error
