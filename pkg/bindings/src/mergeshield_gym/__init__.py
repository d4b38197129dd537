"""Gym-style multi-agent wrapper over the mergeshield environment."""

from mergeshield_gym.env import ACTION_COUNT, MergeShieldGymEnv

__all__ = ["ACTION_COUNT", "MergeShieldGymEnv"]

__version__ = "0.1.0"
