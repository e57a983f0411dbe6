"""Backdoor-trigger detection lab for graph neural networks."""

__version__ = "0.1.0"
