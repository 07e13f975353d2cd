"""Reinforcement-learning channel allocation for wireless coexistence management."""
__version__ = "0.1.0"
