"""Agent-based long-term electricity market with independent PPO learners."""

__version__ = "0.1.0"
