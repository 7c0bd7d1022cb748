"""Cooperative two-altitude UAV navigation toolkit."""
__version__ = "0.1.0"
