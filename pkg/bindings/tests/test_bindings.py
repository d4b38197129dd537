"""Binding fidelity: the wrapper must reproduce native runs exactly."""

import numpy as np
import pytest

from mergeshield.behavior import make_policy
from mergeshield.config import EpisodeConfig, ScenarioConfig
from mergeshield.env import MergingEnv

from mergeshield_gym import ACTION_COUNT, MergeShieldGymEnv

SCN = ScenarioConfig()


def native_episode_log(seed, episode_index, policy_name="random", density="moderate"):
    """Drive the native environment, recording actions, rewards and flat
    observations for later replay."""
    env = MergingEnv(SCN, shield_enabled=True)
    observations = env.reset(
        EpisodeConfig(density=density, seed=seed, episode_index=episode_index)
    )
    acting = env.active_vehicles()
    policies = {
        v.vehicle_id: make_policy(
            policy_name, SCN, np.random.default_rng([seed, episode_index, v.vehicle_id])
        )
        for v in acting
    }
    obs_map = {v.vehicle_id: o for v, o in zip(acting, observations)}
    log = {"actions": [], "rewards": [], "observations": [[o.flat() for o in observations]]}
    while not env.done:
        acting = env.active_vehicles()
        if not acting:
            break
        actions = [int(policies[v.vehicle_id].act(obs_map[v.vehicle_id])) for v in acting]
        observations, rewards, dones, info = env.step(actions)
        obs_map = {vid: o for vid, o in zip(info["acted_ids"], observations)}
        log["actions"].append(actions)
        log["rewards"].append(list(rewards))
        log["observations"].append([o.flat() for o in observations])
    return log


def replay_through_binding(seed, episode_index, actions, density="moderate"):
    env = MergeShieldGymEnv(SCN)
    observations = env.reset(seed=seed, density=density, episode_index=episode_index)
    out = {"rewards": [], "observations": [[tuple(o) for o in observations]]}
    for joint in actions:
        observations, rewards, dones, info = env.step(joint)
        out["rewards"].append(rewards)
        out["observations"].append([tuple(o) for o in observations])
    env.close()
    return out


def test_replay_fidelity_50_episodes():
    """Replaying 50 native action logs through the binding reproduces every
    reward and observation within 1e-9."""
    for episode_index in range(50):
        seed = [11, 22, 33][episode_index % 3]
        policy = "random" if episode_index % 2 == 0 else "aggressive_merger"
        log = native_episode_log(seed, episode_index, policy)
        replay = replay_through_binding(seed, episode_index, log["actions"])
        assert len(replay["rewards"]) == len(log["rewards"])
        for native_r, bound_r in zip(log["rewards"], replay["rewards"]):
            assert np.allclose(native_r, bound_r, atol=1e-9, rtol=0.0)
        for native_obs, bound_obs in zip(log["observations"], replay["observations"]):
            assert len(native_obs) == len(bound_obs)
            for a, b in zip(native_obs, bound_obs):
                assert np.allclose(a, b, atol=1e-9, rtol=0.0)


def test_reset_deterministic():
    env = MergeShieldGymEnv(SCN)
    a = env.reset(seed=7, density="light")
    b = env.reset(seed=7, density="light")
    assert len(a) == len(b)
    for x, y in zip(a, b):
        assert np.array_equal(x, y)


def test_observation_shape_matches_descriptor():
    env = MergeShieldGymEnv(SCN)
    observations = env.reset(seed=3, density="light")
    assert env.observation_dim == 6 * (SCN.n_observed + 1)
    for obs in observations:
        assert obs.shape == (env.observation_dim,)
    assert env.action_count == ACTION_COUNT == 5


def test_invalid_density_raises():
    env = MergeShieldGymEnv(SCN)
    with pytest.raises(ValueError):
        env.reset(seed=0, density="hyperdense")


def test_step_requires_matching_action_count():
    env = MergeShieldGymEnv(SCN)
    env.reset(seed=5, density="light")
    with pytest.raises(ValueError):
        env.step([2] * (len(env.agent_ids) + 1))
    with pytest.raises(ValueError):
        env.step([99] * len(env.agent_ids))


def test_step_after_done_raises():
    env = MergeShieldGymEnv(SCN)
    env.reset(seed=1, density="light", episode_index=2)
    for _ in range(4000):
        ids = env.agent_ids
        if not ids:
            break
        _, _, dones, info = env.step([2] * len(ids))
        if info["episode_done"]:
            break
    with pytest.raises(RuntimeError):
        env.step([2] * max(1, len(env.agent_ids)))


def test_info_exposes_safety_fields():
    env = MergeShieldGymEnv(SCN)
    env.reset(seed=9, density="moderate")
    _, _, _, info = env.step([2] * len(env.agent_ids))
    assert "crash_count" in info
    assert "interventions" in info
    assert "min_headway" in info


def test_close_invalidates_handle():
    env = MergeShieldGymEnv(SCN)
    env.reset(seed=0, density="light")
    env.close()
    with pytest.raises(RuntimeError):
        env.reset(seed=0, density="light")
