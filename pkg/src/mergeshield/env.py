"""Multi-agent episodic merging environment.

One behavioural step runs a fixed number of motion substeps. Within a
substep every vehicle's controller and shield read the same immutable
snapshot and all vehicles advance simultaneously, so results cannot depend
on update order. Everything is driven by a seeded generator: a (seed,
episode index, config, policy) tuple fully determines every trace byte.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from mergeshield.behavior import (
    BehaviouralAction,
    Observation,
    decode_action,
    lane_keep_steering,
    speed_tracking_accel,
)
from mergeshield.config import (
    DENSITY_BANDS,
    ConfigError,
    EpisodeConfig,
    RewardConfig,
    ScenarioConfig,
)
from mergeshield.road import (
    HIGHWAY,
    RAMP,
    build_merging_layout,
    longitudinal_gap,
    occupies_lane,
)
from mergeshield.shield import barrier_value, shield
from mergeshield.trace import StepTrace
from mergeshield.vehicle import (
    ControlInput,
    VehicleGeometry,
    VehicleState,
    clamp,
    step_kinematics,
)


@dataclass
class Vehicle:
    """Mutable per-vehicle simulation record."""

    vehicle_id: int
    state: VehicleState
    geometry: VehicleGeometry
    lane: int
    target_lane: int
    target_speed: float
    crashed: bool = False
    exited: bool = False
    failed_merge: bool = False
    ramp_wait: float = 0.0
    crashed_this_step: bool = False

    @property
    def x(self) -> float:
        return self.state.x

    @property
    def length(self) -> float:
        return self.geometry.length


def _rect_axes(state: VehicleState):
    c = math.cos(state.psi)
    s = math.sin(state.psi)
    return (c, s), (-s, c)


def rectangles_overlap(a: Vehicle, b: Vehicle) -> bool:
    """Separating-axis test between two heading-oriented footprints."""
    ax, ay = a.state.x, a.state.y
    bx, by = b.state.x, b.state.y
    # Cheap reject: bounding circles.
    ra = 0.5 * math.hypot(a.geometry.length, a.geometry.width)
    rb = 0.5 * math.hypot(b.geometry.length, b.geometry.width)
    if (ax - bx) ** 2 + (ay - by) ** 2 > (ra + rb) ** 2:
        return False
    half_a = (0.5 * a.geometry.length, 0.5 * a.geometry.width)
    half_b = (0.5 * b.geometry.length, 0.5 * b.geometry.width)
    axes_a = _rect_axes(a.state)
    axes_b = _rect_axes(b.state)
    dx, dy = bx - ax, by - ay
    for axis in axes_a + axes_b:
        center_dist = abs(dx * axis[0] + dy * axis[1])
        reach_a = sum(
            h * abs(u[0] * axis[0] + u[1] * axis[1]) for h, u in zip(half_a, axes_a)
        )
        reach_b = sum(
            h * abs(u[0] * axis[0] + u[1] * axis[1]) for h, u in zip(half_b, axes_b)
        )
        if center_dist > reach_a + reach_b:
            return False
    return True


def detect_crash(vehicles: Sequence[Vehicle]) -> list[tuple[int, int]]:
    """All overlapping vehicle pairs (ids ascending within and across pairs)."""
    pairs = []
    n = len(vehicles)
    for i in range(n):
        vi = vehicles[i]
        if vi.exited:
            continue
        for j in range(i + 1, n):
            vj = vehicles[j]
            if vj.exited:
                continue
            if rectangles_overlap(vi, vj):
                pairs.append((vi.vehicle_id, vj.vehicle_id))
    return pairs


def compute_reward(
    *,
    crashed: bool,
    speed: float,
    headway: Optional[float],
    on_ramp: bool,
    ramp_wait: float,
    weights: RewardConfig,
) -> float:
    """Weighted sum of the crash, speed, headway and merge-wait terms."""
    r_c = -1.0 if crashed else 0.0
    band = weights.speed_high - weights.speed_low
    r_s = clamp((speed - weights.speed_low) / band, 0.0, 1.0)
    if headway is None or not math.isfinite(headway) or headway <= 0.0:
        r_h = weights.penalty_floor if headway is not None and headway <= 0.0 else 0.0
    else:
        r_h = clamp(
            min(0.0, math.log(headway / weights.headway_reference)),
            weights.penalty_floor,
            0.0,
        )
    r_m = clamp(-ramp_wait / weights.merge_wait_reference, weights.penalty_floor, 0.0) if on_ramp else 0.0
    return (
        weights.w_crash * r_c
        + weights.w_speed * r_s
        + weights.w_headway * r_h
        + weights.w_merge * r_m
    )


def shared_reward(own: float, neighbour_rewards: Sequence[float]) -> float:
    """Mean of the ego reward and its observed neighbours' rewards."""
    total = own + sum(neighbour_rewards)
    return total / (1 + len(neighbour_rewards))


@dataclass
class EpisodeSummary:
    """Streaming per-episode aggregates used for metrics and acceptance."""

    crash_count: int = 0
    crash_pairs: list = field(default_factory=list)
    failed_merges: int = 0
    min_headway: float = math.inf
    min_barrier: float = math.inf
    interventions: int = 0
    vetoes: int = 0
    controlled_substeps: int = 0
    slack_events: int = 0
    max_slack: float = 0.0
    audit_min_margin: float = math.inf
    speed_sum: float = 0.0
    speed_samples: int = 0
    behaviour_steps: int = 0
    gate_violations: int = 0
    completed_merges: int = 0


class MergingEnv:
    """On-ramp merging environment with the safety shield in the loop."""

    def __init__(
        self,
        scenario: Optional[ScenarioConfig] = None,
        shield_enabled: bool = True,
        trace_sink: Optional[Callable[[StepTrace], None]] = None,
    ):
        self.scenario = scenario or ScenarioConfig()
        self.scenario.validate()
        self.layout = build_merging_layout(self.scenario)
        self.shield_enabled = shield_enabled
        self.trace_sink = trace_sink
        self.vehicles: list[Vehicle] = []
        self.summary = EpisodeSummary()
        self._episode: Optional[EpisodeConfig] = None
        self._behaviour_step = 0
        self._all_cleared_step: Optional[int] = None
        self._done = False
        self._episode_id = 0

    # ------------------------------------------------------------------ reset

    def reset(self, episode: EpisodeConfig) -> list[Observation]:
        episode.validate()
        self._episode = episode
        self._episode_id = episode.episode_index
        rng = np.random.default_rng([episode.seed, episode.episode_index])
        lo, hi = DENSITY_BANDS[episode.density]
        count = int(rng.integers(lo, hi + 1))

        spacing = episode.spawn_spacing
        layout = self.layout
        hw_region = (0.0, self.scenario.spawn_region)
        ramp_region = (layout.ramp_start, self.scenario.spawn_region)
        hw_cap = int(math.floor((hw_region[1] - hw_region[0]) / spacing)) + 1
        ramp_cap = int(math.floor((ramp_region[1] - ramp_region[0]) / spacing)) + 1
        if count > hw_cap + ramp_cap:
            count = hw_cap + ramp_cap  # resample downward to what fits
        n_ramp = int(rng.integers(1, min(count - 1, ramp_cap) + 1)) if count >= 2 else count
        n_ramp = min(n_ramp, ramp_cap)
        n_highway = count - n_ramp
        if n_highway > hw_cap:
            n_highway = hw_cap
            count = n_highway + n_ramp

        def positions(region: tuple[float, float], k: int) -> list[float]:
            if k == 0:
                return []
            span = region[1] - region[0]
            extra = span - (k - 1) * spacing
            if extra < 0.0:
                raise ConfigError(
                    f"spawn region {region} cannot fit {k} vehicles at {spacing} m spacing"
                )
            cuts = np.sort(rng.uniform(0.0, extra, size=k))
            return [region[0] + float(cuts[i]) + i * spacing for i in range(k)]

        spawns = []
        for x in positions(hw_region, n_highway):
            speed = float(rng.uniform(*self.scenario.highway_speed_band))
            spawns.append((x, HIGHWAY, speed))
        for x in positions(ramp_region, n_ramp):
            speed = float(rng.uniform(*self.scenario.ramp_speed_band))
            spawns.append((x, RAMP, speed))
        spawns.sort(key=lambda s: (s[0], s[1]))

        geometry = VehicleGeometry(
            length=self.scenario.vehicle_length, width=self.scenario.vehicle_width
        )
        self.vehicles = []
        for vid, (x, lane, speed) in enumerate(spawns):
            self.vehicles.append(
                Vehicle(
                    vehicle_id=vid,
                    state=VehicleState.create(
                        x=x, y=layout.lane_center(lane), speed=speed, psi=0.0
                    ),
                    geometry=geometry,
                    lane=lane,
                    target_lane=lane,
                    target_speed=speed,
                )
            )
        self.summary = EpisodeSummary()
        self._behaviour_step = 0
        self._all_cleared_step = None
        self._done = False
        return [self._observe(v) for v in self.active_vehicles()]

    # ------------------------------------------------------------ observations

    def active_vehicles(self) -> list[Vehicle]:
        return [v for v in self.vehicles if not v.exited and not v.crashed]

    def _present(self) -> list[Vehicle]:
        """Vehicles still on the road (crashed ones stay as obstacles)."""
        return [v for v in self.vehicles if not v.exited]

    def _neighbours(self, ego: Vehicle) -> list[Vehicle]:
        candidates = []
        for other in self.vehicles:
            if other.vehicle_id == ego.vehicle_id or other.exited:
                continue
            dx = other.state.x - ego.state.x
            if abs(dx) <= self.scenario.perception_range:
                candidates.append((abs(dx), other.vehicle_id, other))
        candidates.sort(key=lambda t: (t[0], t[1]))
        return [c[2] for c in candidates[: self.scenario.n_observed]]

    def _observe(self, ego: Vehicle) -> Observation:
        if ego.exited:
            zero = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
            return Observation(ego=zero, others=(zero,) * self.scenario.n_observed)
        s = ego.state
        blocks = []
        for other in self._neighbours(ego):
            o = other.state
            blocks.append(
                (1.0, o.x - s.x, o.y - s.y, o.v_x - s.v_x, o.v_y - s.v_y, o.psi - s.psi)
            )
        while len(blocks) < self.scenario.n_observed:
            blocks.append((0.0, 0.0, 0.0, 0.0, 0.0, 0.0))
        return Observation(
            ego=(1.0, s.x, s.y, s.v_x, s.v_y, s.psi), others=tuple(blocks)
        )

    # ------------------------------------------------------------------- step

    def step(self, actions: Sequence[int]):
        """Advance one behavioural step (substeps_per_decision motion steps).

        Takes one action per active vehicle, ordered by vehicle id. Returns
        (observations, rewards, dones, info) over that same vehicle order.
        """
        if self._episode is None:
            raise RuntimeError("reset() must be called before step()")
        if self._done:
            raise RuntimeError("episode is done; call reset()")
        acting = self.active_vehicles()
        if len(actions) != len(acting):
            raise ValueError(
                f"expected {len(acting)} actions (one per active vehicle), got {len(actions)}"
            )

        for vehicle, action in zip(acting, actions):
            vehicle.target_lane, vehicle.target_speed = decode_action(
                BehaviouralAction(action),
                vehicle.target_lane,
                vehicle.target_speed,
                vehicle.state.x,
                self.layout,
                self.scenario,
            )

        new_crashes: list[tuple[int, int]] = []
        for sub in range(self.scenario.substeps_per_decision):
            new_crashes.extend(self._substep(sub))
        self._behaviour_step += 1
        self.summary.behaviour_steps = self._behaviour_step

        rewards = self._rewards(acting)
        self._update_termination(new_crashes)
        observations = [self._observe(v) for v in acting]
        dones = [self._done or v.exited or v.crashed for v in acting]
        info = {
            "active_ids": [v.vehicle_id for v in self.active_vehicles()],
            "acted_ids": [v.vehicle_id for v in acting],
            "new_crashes": new_crashes,
            "crash_count": self.summary.crash_count,
            "failed_merges": self.summary.failed_merges,
            "min_headway": self.summary.min_headway,
            "interventions": self.summary.interventions,
            "slack_events": self.summary.slack_events,
            "audit_min_margin": self.summary.audit_min_margin,
            "episode_done": self._done,
            "behaviour_step": self._behaviour_step,
        }
        return observations, rewards, dones, info

    def _substep(self, sub: int) -> list[tuple[int, int]]:
        scenario = self.scenario
        cfg = scenario.shield
        layout = self.layout
        active = self.active_vehicles()
        snapshot = self._present()  # states are immutable; controls read them first

        controls: dict[int, ControlInput] = {}
        decisions: dict[int, object] = {}

        for vehicle in active:
            raw_accel = speed_tracking_accel(vehicle.state, vehicle.target_speed, scenario)
            raw_steer = lane_keep_steering(
                vehicle.state, layout.lane_center(vehicle.target_lane), scenario
            )
            fallback = (
                raw_steer
                if vehicle.target_lane == vehicle.lane
                else lane_keep_steering(
                    vehicle.state, layout.lane_center(vehicle.lane), scenario
                )
            )
            raw = ControlInput(accel=raw_accel, steering=raw_steer)
            if self.shield_enabled:
                decision = shield(
                    vehicle,
                    snapshot,
                    layout,
                    raw,
                    vehicle.target_lane,
                    fallback,
                    cfg,
                    scenario,
                )
                controls[vehicle.vehicle_id] = decision.control
                decisions[vehicle.vehicle_id] = decision
            else:
                controls[vehicle.vehicle_id] = ControlInput(
                    accel=clamp(raw_accel, cfg.accel_min, cfg.accel_max),
                    steering=clamp(raw_steer, -scenario.steer_max, scenario.steer_max),
                )
                decisions[vehicle.vehicle_id] = None

        # Advance everyone simultaneously from the snapshot.
        for vehicle in active:
            vehicle.state = step_kinematics(
                vehicle.state,
                controls[vehicle.vehicle_id],
                vehicle.geometry,
                cfg.dt,
                speed_max=cfg.speed_max,
                direction_slew=scenario.direction_slew,
            )

        # Post-step bookkeeping from the new states.
        for vehicle in active:
            previous_lane = vehicle.lane
            vehicle.lane = layout.membership(vehicle.state.y, vehicle.lane)
            if previous_lane == RAMP and vehicle.lane == HIGHWAY:
                self.summary.completed_merges += 1
            if vehicle.lane == RAMP:
                vehicle.ramp_wait += cfg.dt
                if vehicle.state.x > layout.merge_end and not vehicle.failed_merge:
                    vehicle.failed_merge = True
                    self.summary.failed_merges += 1
            if vehicle.state.x >= layout.total_length:
                vehicle.exited = True
            decision = decisions[vehicle.vehicle_id]
            if decision is not None and decision.lateral_vetoed:
                vehicle.target_lane = vehicle.lane  # abort back to the current lane

        # Realized-chain invariance audit: every constraint row the shield
        # just solved recorded the pre-step barrier h_old against a specific
        # leader; the post-step barrier against that same leader must satisfy
        # h_new + (eta - 1) * h_old >= ~0.
        if self.shield_enabled:
            by_id = {v.vehicle_id: v for v in self.vehicles}
            eta = cfg.zero_order_coeff
            for vehicle in active:
                decision = decisions[vehicle.vehicle_id]
                if decision is None:
                    continue
                for leader_id, h_old in decision.audit_rows:
                    leader = by_id.get(leader_id)
                    if leader is None or leader.exited:
                        continue
                    gap = longitudinal_gap(vehicle, leader)
                    h_new = barrier_value(gap, vehicle.state.speed, cfg)
                    margin = h_new + (eta - 1.0) * h_old
                    if margin < self.summary.audit_min_margin:
                        self.summary.audit_min_margin = margin

        # Metrics, headways and traces from the new states.
        crashes = detect_crash(self._present())
        fresh: list[tuple[int, int]] = []
        crashed_now = set()
        for i, j in crashes:
            pair = (i, j)
            if pair not in self.summary.crash_pairs:
                self.summary.crash_pairs.append(pair)
                self.summary.crash_count += 1
                fresh.append(pair)
            crashed_now.add(i)
            crashed_now.add(j)

        for vehicle in active:
            if vehicle.vehicle_id in crashed_now and not vehicle.crashed:
                vehicle.crashed = True
                vehicle.crashed_this_step = True

        for vehicle in active:
            headway, h_ol, leader_id = self._headway(vehicle)
            if headway is not None and headway < self.summary.min_headway:
                self.summary.min_headway = headway
            if h_ol is not None and h_ol < self.summary.min_barrier:
                self.summary.min_barrier = h_ol
            decision = decisions[vehicle.vehicle_id]
            self.summary.controlled_substeps += 1
            self.summary.speed_sum += vehicle.state.speed
            self.summary.speed_samples += 1
            if decision is not None:
                if decision.longitudinal_corrected or decision.lateral_vetoed:
                    self.summary.interventions += 1
                if decision.lateral_vetoed:
                    self.summary.vetoes += 1
                if decision.slack > 1e-9:
                    self.summary.slack_events += 1
                    self.summary.max_slack = max(self.summary.max_slack, decision.slack)
            if self.trace_sink is not None:
                self._emit_trace(
                    vehicle, sub, decision, controls[vehicle.vehicle_id], headway, h_ol, leader_id
                )
        return fresh

    def _headway(self, vehicle: Vehicle):
        """(headway, current leader barrier, leader id) from the new state."""
        layout = self.layout
        rng = self.scenario.perception_range
        ego_x = vehicle.state.x
        leading = None
        leading_dx = math.inf
        for other in self.vehicles:
            if other.exited or other.vehicle_id == vehicle.vehicle_id:
                continue
            dx = other.state.x - ego_x
            if 0.0 < dx <= rng and dx < leading_dx and occupies_lane(other, vehicle.lane, layout):
                leading, leading_dx = other, dx
        if leading is None:
            return None, None, None
        gap = longitudinal_gap(vehicle, leading)
        cfg = self.scenario.shield
        h_ol = barrier_value(gap, vehicle.state.speed, cfg)
        headway = None
        if vehicle.state.speed > 1e-9:
            headway = gap / vehicle.state.speed
        return headway, h_ol, leading.vehicle_id

    def _emit_trace(self, vehicle, sub, decision, applied: ControlInput, headway, h_ol, leader_id):
        s = vehicle.state
        trace = StepTrace(
            episode_id=self._episode_id,
            behaviour_step=self._behaviour_step,
            sub_step=sub,
            vehicle_id=vehicle.vehicle_id,
            x=s.x,
            y=s.y,
            v_x=s.v_x,
            v_y=s.v_y,
            psi=s.psi,
            speed=s.speed,
            lane=vehicle.lane,
            accel_raw=decision.raw.accel if decision is not None else applied.accel,
            steer_raw=decision.raw.steering if decision is not None else applied.steering,
            accel_safe=applied.accel,
            steer_safe=applied.steering,
            longitudinal_corrected=bool(decision.longitudinal_corrected) if decision else False,
            lateral_vetoed=bool(decision.lateral_vetoed) if decision else False,
            h_leading=h_ol,
            h_target_leading=decision.h_target_leading if decision else None,
            h_target_rear=decision.h_target_rear if decision else None,
            slack=decision.slack if decision else 0.0,
            headway=headway,
            leader_id=leader_id,
        )
        self.trace_sink(trace)

    def _rewards(self, acting: Sequence[Vehicle]) -> list[float]:
        weights = self.scenario.reward
        individual: dict[int, float] = {}
        for vehicle in self.vehicles:
            if vehicle.exited:
                individual[vehicle.vehicle_id] = 0.0
                continue
            headway, _, _ = self._headway(vehicle)
            individual[vehicle.vehicle_id] = compute_reward(
                crashed=vehicle.crashed_this_step,
                speed=vehicle.state.speed,
                headway=headway,
                on_ramp=vehicle.lane == RAMP,
                ramp_wait=vehicle.ramp_wait,
                weights=weights,
            )
        rewards = []
        for vehicle in acting:
            # Vehicles crashed in earlier steps are excluded from the mean;
            # a crash this step still propagates its penalty to neighbours.
            neighbours = [
                individual[o.vehicle_id]
                for o in self._neighbours(vehicle)
                if not o.crashed or o.crashed_this_step
            ]
            rewards.append(shared_reward(individual[vehicle.vehicle_id], neighbours))
        for vehicle in acting:
            vehicle.crashed_this_step = False
        return rewards

    def _update_termination(self, new_crashes) -> None:
        episode = self._episode
        live = [v for v in self.vehicles if not v.exited and not v.crashed]
        if self._all_cleared_step is None:
            if all(v.state.x > self.layout.merge_end for v in live):
                self._all_cleared_step = self._behaviour_step
        if not live:
            self._done = True
        elif self._all_cleared_step is not None and (
            self._behaviour_step - self._all_cleared_step >= episode.max_steps_after_merge
        ):
            self._done = True
        elif self._behaviour_step >= episode.max_behaviour_steps:
            self._done = True
        elif new_crashes and not self.shield_enabled:
            self._done = True

    @property
    def done(self) -> bool:
        return self._done
