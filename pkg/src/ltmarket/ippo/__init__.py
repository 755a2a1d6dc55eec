"""Independent PPO learners, one actor and one critic per agent."""

from .checkpoint import CheckpointError, PolicySet, load_checkpoint, save_checkpoint
from .config import PRESETS, TrainConfig, preset
from .policy import MultiDiscrete, init_params
from .ppo import AdamState, adam_update, compute_targets, ppo_loss
from .rollout import collect_rollouts, run_episode, run_episodes
from .train import TrainingDiverged, init_policy_set, train

__all__ = [
    "AdamState", "CheckpointError", "MultiDiscrete", "PRESETS", "PolicySet", "TrainConfig", "TrainingDiverged",
    "adam_update", "collect_rollouts", "compute_targets", "init_params", "init_policy_set", "load_checkpoint",
    "ppo_loss", "preset", "run_episode", "run_episodes", "save_checkpoint", "train",
]
