"""Reinforcement-learning flowsheet synthesis with shortcut-to-rigorous transfer."""

__version__ = "0.1.0"
