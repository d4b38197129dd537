"""Discrete behavioural actions, the feedback controllers that realise them,
and the scripted policies used to load-test the shield."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum
from typing import Protocol

import numpy as np

from mergeshield.config import ScenarioConfig
from mergeshield.road import RoadLayout
from mergeshield.shield import safe_distance
from mergeshield.vehicle import VehicleState, clamp


class BehaviouralAction(IntEnum):
    RIGHT = 0
    LEFT = 1
    FOLLOW_LANE = 2
    SPEED_UP = 3
    SLOW_DOWN = 4


def decode_action(
    action: BehaviouralAction,
    target_lane: int,
    target_speed: float,
    x: float,
    layout: RoadLayout,
    scenario: ScenarioConfig,
) -> tuple[int, float]:
    """Map a behavioural action onto new (target lane, target speed).

    Lane shifts apply only where an adjacent lane is actually reachable at
    the vehicle's position; otherwise the action degrades to lane following.
    FOLLOW_LANE keeps both targets, so an in-progress lane change continues.
    """
    action = BehaviouralAction(action)
    if action == BehaviouralAction.RIGHT:
        candidate = target_lane + 1
        if layout.can_change(target_lane, candidate, x):
            return candidate, target_speed
        return target_lane, target_speed
    if action == BehaviouralAction.LEFT:
        candidate = target_lane - 1
        if layout.can_change(target_lane, candidate, x):
            return candidate, target_speed
        return target_lane, target_speed
    if action == BehaviouralAction.SPEED_UP:
        return target_lane, clamp(target_speed + scenario.speed_step, 0.0, scenario.shield.speed_max)
    if action == BehaviouralAction.SLOW_DOWN:
        return target_lane, clamp(target_speed - scenario.speed_step, 0.0, scenario.shield.speed_max)
    return target_lane, target_speed  # FOLLOW_LANE keeps both targets


def speed_tracking_accel(state: VehicleState, target_speed: float, scenario: ScenarioConfig) -> float:
    """Proportional speed tracking, clamped to the acceleration limits."""
    accel = scenario.gain_speed * (target_speed - state.speed)
    return clamp(accel, scenario.shield.accel_min, scenario.shield.accel_max)


def lane_keep_steering(
    state: VehicleState,
    target_lane_center_y: float,
    scenario: ScenarioConfig,
) -> float:
    """Cascaded lateral controller: lateral error -> desired lateral speed ->
    desired travel direction -> steering angle.

    The steering angle is chosen so the one-step direction response (heading
    rate plus slip) lands on the desired direction; the integrator's
    direction-slew clamp rate-limits the transient.
    """
    error = target_lane_center_y - state.y
    vy_des = clamp(error * scenario.gain_lateral, -scenario.lateral_speed_max, scenario.lateral_speed_max)
    speed = max(state.speed, scenario.speed_floor)
    phi_des = math.asin(clamp(vy_des / speed, -0.98, 0.98))
    phi_des = clamp(phi_des, -scenario.direction_cap, scenario.direction_cap)
    # One-step direction response: psi + g*sin(beta) + beta with
    # g = 2*speed*dt/length; solve approximately with sin(beta) ~ beta.
    g = 2.0 * state.speed * scenario.dt / scenario.vehicle_length
    beta = (phi_des - state.psi) / (1.0 + g)
    beta_max = math.atan(0.5 * math.tan(scenario.steer_max))
    beta = clamp(beta, -beta_max + 1e-9, beta_max - 1e-9)
    delta = math.atan(2.0 * math.tan(beta))
    return clamp(delta, -scenario.steer_max, scenario.steer_max)


@dataclass(frozen=True)
class Observation:
    """Per-vehicle observation: absolute ego block plus n relative blocks.

    Each block is (is_present, x, y, v_x, v_y, psi); observed blocks are
    relative to the ego and sorted by ascending |dx|, zero-padded when fewer
    than n vehicles are in perception range.
    """

    ego: tuple[float, float, float, float, float, float]
    others: tuple[tuple[float, float, float, float, float, float], ...]

    def flat(self) -> tuple[float, ...]:
        out = list(self.ego)
        for block in self.others:
            out.extend(block)
        return tuple(out)


class PolicyInterface(Protocol):
    """Per-vehicle behavioural policy: observation in, action out.

    Implementations may hold per-vehicle RNG state; one policy object must
    not be shared across vehicles.
    """

    def act(self, obs: Observation) -> BehaviouralAction: ...


class RandomPolicy:
    """Uniform over the five actions; reproducible from its RNG."""

    def __init__(self, scenario: ScenarioConfig, rng: np.random.Generator):
        self._rng = rng

    def act(self, obs: Observation) -> BehaviouralAction:
        return BehaviouralAction(int(self._rng.integers(0, 5)))


class KeepLaneCruisePolicy:
    def __init__(self, scenario: ScenarioConfig, rng: np.random.Generator):
        pass

    def act(self, obs: Observation) -> BehaviouralAction:
        return BehaviouralAction.FOLLOW_LANE


class _ScenarioAware:
    def __init__(self, scenario: ScenarioConfig, rng: np.random.Generator):
        self.scenario = scenario
        self.merge_start = scenario.entry_length + scenario.ramp_length
        self.merge_end = self.merge_start + scenario.merge_length

    def on_ramp(self, obs: Observation) -> bool:
        y = obs.ego[2]
        return abs(y - (-self.scenario.lane_width)) < abs(y)

    def in_merge_section(self, obs: Observation) -> bool:
        return self.merge_start <= obs.ego[1] <= self.merge_end


class AggressiveMergerPolicy(_ScenarioAware):
    """Demands the merge regardless of gaps and floors the accelerator once
    off the ramp; the adversarial load for the shield. On the ramp it keeps
    its spawn speed, so the cut-in happens well below highway speeds."""

    def act(self, obs: Observation) -> BehaviouralAction:
        if self.on_ramp(obs):
            if self.in_merge_section(obs):
                return BehaviouralAction.LEFT
            return BehaviouralAction.FOLLOW_LANE
        return BehaviouralAction.SPEED_UP


class ShyMergerPolicy(_ScenarioAware):
    """Requests the merge only when both target-lane gaps are comfortably
    more than twice the safe distance."""

    def act(self, obs: Observation) -> BehaviouralAction:
        if not (self.on_ramp(obs) and self.in_merge_section(obs)):
            return BehaviouralAction.FOLLOW_LANE
        ego_y = obs.ego[2]
        speed = math.hypot(obs.ego[3], obs.ego[4])
        x_safe, _ = safe_distance(speed, self.scenario.shield)
        length = self.scenario.vehicle_length
        ahead_gap = math.inf
        rear_gap = math.inf
        for block in obs.others:
            if block[0] != 1.0:
                continue
            other_y = ego_y + block[2]
            if abs(other_y) > 0.5 * self.scenario.lane_width:
                continue  # not in the highway lane
            dx = block[1]
            if dx >= 0.0:
                ahead_gap = min(ahead_gap, dx - length)
            else:
                rear_gap = min(rear_gap, -dx - length)
        if ahead_gap > 2.0 * x_safe and rear_gap > 2.0 * x_safe:
            return BehaviouralAction.LEFT
        return BehaviouralAction.FOLLOW_LANE


POLICIES = {
    "random": RandomPolicy,
    "keep_lane_cruise": KeepLaneCruisePolicy,
    "aggressive_merger": AggressiveMergerPolicy,
    "shy_merger": ShyMergerPolicy,
}


def scripted_policies() -> dict[str, type]:
    """Name -> policy class for every scripted policy."""
    return dict(POLICIES)


def make_policy(name: str, scenario: ScenarioConfig, rng: np.random.Generator):
    try:
        cls = POLICIES[name]
    except KeyError:
        raise ValueError(f"unknown policy {name!r}; available: {sorted(POLICIES)}") from None
    return cls(scenario, rng)
