"""Utility modules for rain."""
