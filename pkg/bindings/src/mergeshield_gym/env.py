"""Thin gym-style handle over the native merging environment.

The wrapper owns no simulation state beyond the native environment object:
all randomness, dynamics and rewards are native-side, so a binding-driven
run reproduces a natively driven run exactly. The multi-agent API is
parallel (one observation/action/reward/done slot per agent)."""

from __future__ import annotations

from typing import Mapping, Optional, Sequence

import numpy as np

from mergeshield.config import (
    DENSITY_BANDS,
    EpisodeConfig,
    ScenarioConfig,
    load_scenario,
    scenario_from_mapping,
)
from mergeshield.env import MergingEnv

ACTION_COUNT = 5


class MergeShieldGymEnv:
    """reset/step/close handle for external multi-agent RL trainers.

    One handle wraps one native environment; handles must not be shared
    across concurrent callers, but any number of handles coexist safely.
    """

    def __init__(
        self,
        scenario: ScenarioConfig | str | Mapping | None = None,
        shield_enabled: bool = True,
    ):
        if isinstance(scenario, ScenarioConfig):
            self._scenario = scenario
        elif isinstance(scenario, Mapping):
            self._scenario = scenario_from_mapping(scenario)
        else:
            self._scenario = load_scenario(scenario)
        self._env: Optional[MergingEnv] = MergingEnv(
            self._scenario, shield_enabled=shield_enabled
        )
        self._started = False

    # ------------------------------------------------------------- descriptors

    @property
    def observation_dim(self) -> int:
        """Flat length of one agent's observation: ego block plus the
        observed-vehicle blocks, six numbers each."""
        return 6 * (self._scenario.n_observed + 1)

    @property
    def action_count(self) -> int:
        return ACTION_COUNT

    @property
    def agent_ids(self) -> list[int]:
        self._require_open()
        return [v.vehicle_id for v in self._env.active_vehicles()]

    # -------------------------------------------------------------------- api

    def reset(self, seed: int, density: str = "moderate", episode_index: int = 0):
        """Start an episode; returns one observation array per agent."""
        self._require_open()
        if density not in DENSITY_BANDS:
            raise ValueError(
                f"unknown density {density!r}; expected one of {sorted(DENSITY_BANDS)}"
            )
        observations = self._env.reset(
            EpisodeConfig(density=density, seed=seed, episode_index=episode_index)
        )
        self._started = True
        return [np.asarray(o.flat(), dtype=np.float64) for o in observations]

    def step(self, actions: Sequence[int]):
        """Advance one behavioural step for all live agents.

        Returns (observations, rewards, dones, info) as parallel lists over
        the agents that acted. Raises once every agent is done.
        """
        self._require_open()
        if not self._started:
            raise RuntimeError("reset() must be called before step()")
        if self._env.done or not self._env.active_vehicles():
            raise RuntimeError("episode is over; call reset()")
        for action in actions:
            if not 0 <= int(action) < ACTION_COUNT:
                raise ValueError(f"action {action!r} outside 0..{ACTION_COUNT - 1}")
        observations, rewards, dones, info = self._env.step([int(a) for a in actions])
        obs_arrays = [np.asarray(o.flat(), dtype=np.float64) for o in observations]
        return obs_arrays, list(rewards), list(dones), info

    def close(self) -> None:
        self._env = None
        self._started = False

    def _require_open(self) -> None:
        if self._env is None:
            raise RuntimeError("environment handle is closed")

    def __enter__(self) -> "MergeShieldGymEnv":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
