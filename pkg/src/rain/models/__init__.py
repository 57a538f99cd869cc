"""Learned modules: graph message passing, hard attention, soft-attention generator."""
