"""Particle system simulation."""
