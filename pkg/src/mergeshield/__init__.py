"""Deterministic on-ramp merging simulator with a decentralised safety shield.

Each vehicle's longitudinal control is filtered through a slack-penalised
quadratic program over control-barrier constraints, and lane changes are
gated by rule-based invariance checks, so a configurable time-headway bound
holds regardless of the behavioural policy driving the vehicles.
"""

from mergeshield.config import (
    EpisodeConfig,
    RewardConfig,
    ScenarioConfig,
    ShieldConfig,
    load_scenario,
)
from mergeshield.env import MergingEnv
from mergeshield.harness import MetricsReport, run_batch

__all__ = [
    "EpisodeConfig",
    "MergingEnv",
    "MetricsReport",
    "RewardConfig",
    "ScenarioConfig",
    "ShieldConfig",
    "load_scenario",
    "run_batch",
]

__version__ = "0.1.0"
