"""Hierarchical actor-critic agent, PPO training and transfer harness."""

from .policy import Agent, AgentSpec, act, featurize, joint_log_prob
from .ppo import TrainConfig, TrajectoryBuffer, gae, ppo_update
from .train import LearningCurve, load_agent, moving_average, save_agent, train, transfer

__all__ = [
    "Agent", "AgentSpec", "LearningCurve", "TrainConfig", "TrajectoryBuffer", "act", "featurize",
    "gae", "joint_log_prob", "load_agent", "moving_average", "ppo_update", "save_agent", "train",
    "transfer",
]
