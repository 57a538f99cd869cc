"""Hybrid-attention motion forecasting on mixed charged/uncharged particle systems."""

__version__ = "0.1.0"
__description__ = "RL hard attention plus soft graph attention for multi-agent trajectory forecasting"
