"""Dataset storage for simulated particle cases."""
