"""Parameterized differentiable functions, optimizers and checkpoints."""

from .checkpoint import load_checkpoint, save_checkpoint
from .gradients import grad_check
from .layers import MLP, masked_softmax, mlp_forward, recurrent_step, three_layer
from .params import ParamSet, build_optimizer, seeded_init, substream

__all__ = [
    "MLP",
    "ParamSet",
    "build_optimizer",
    "grad_check",
    "load_checkpoint",
    "masked_softmax",
    "mlp_forward",
    "recurrent_step",
    "save_checkpoint",
    "seeded_init",
    "substream",
    "three_layer",
]
