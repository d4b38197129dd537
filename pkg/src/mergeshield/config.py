"""Configuration dataclasses and the scenario file loader.

All tunables live here: road geometry, vehicle limits, shield parameters,
controller gains, reward shaping and spawn bands. A scenario file is a flat
YAML mapping whose keys mirror the dataclass fields (dotted keys address the
nested sections, e.g. ``shield.time_headway``).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml


class ConfigError(ValueError):
    """Raised for invalid or inconsistent configuration values."""


@dataclass(frozen=True)
class ShieldConfig:
    """Safety-shield parameters.

    ``time_headway`` is the headway bound the shield enforces (seconds of
    bumper-to-bumper gap per unit of follower speed). ``zero_order_coeff``
    in (0, 1] sets how strongly the barrier condition pushes states back
    into the safe set: the per-step constraint is
    ``h_next + (zero_order_coeff - 1) * h_now >= 0``.
    """

    time_headway: float = 0.5
    zero_order_coeff: float = 0.0325
    slack_penalty: float = 1.0e4
    accel_min: float = -5.0
    accel_max: float = 5.0
    dt: float = 1.0 / 15.0
    # Acceleration assumed for observed vehicles when predicting one step
    # ahead: leaders brake at this value, the target-rear vehicle is assumed
    # at accel_max (the safety-pessimal choice for each slot).
    worst_case_leader_accel: float = -5.0
    headway_floor: float = 0.001
    speed_max: float = 40.0
    # Safety margin (m) subtracted inside the braking-horizon feasibility
    # guard; absorbs the small conservatism gaps left by observed vehicles
    # turning while braking.
    braking_margin: float = 2.0

    def validate(self) -> None:
        if not (0.0 < self.zero_order_coeff <= 1.0):
            raise ConfigError(f"zero_order_coeff must be in (0, 1], got {self.zero_order_coeff}")
        if self.time_headway <= 0.0:
            raise ConfigError(f"time_headway must be positive, got {self.time_headway}")
        if self.dt <= 0.0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if not (self.accel_min < 0.0 < self.accel_max):
            raise ConfigError(
                f"need accel_min < 0 < accel_max, got [{self.accel_min}, {self.accel_max}]"
            )
        if self.slack_penalty <= 0.0:
            raise ConfigError(f"slack_penalty must be positive, got {self.slack_penalty}")
        if self.speed_max <= 0.0:
            raise ConfigError(f"speed_max must be positive, got {self.speed_max}")
        if self.braking_margin < 0.0:
            raise ConfigError(f"braking_margin must be nonnegative, got {self.braking_margin}")
        if not (self.accel_min <= self.worst_case_leader_accel < 0.0):
            # Every vehicle shares the same physical limits, so assuming
            # observed braking beyond accel_min would be vacuous while
            # assuming none at all defeats the worst-case model.
            raise ConfigError(
                "worst_case_leader_accel must lie in [accel_min, 0), got "
                f"{self.worst_case_leader_accel}"
            )


@dataclass(frozen=True)
class RewardConfig:
    """Weights and shaping parameters for the per-vehicle reward."""

    w_crash: float = 200.0
    w_speed: float = 1.0
    w_headway: float = 4.0
    w_merge: float = 4.0
    # Linear speed ramp: reward 0 at speed_low, 1 at speed_high.
    speed_low: float = 20.0
    speed_high: float = 30.0
    # Headway term reference: log penalty below this many seconds, 0 above.
    headway_reference: float = 0.5
    # Ramp-waiting penalty normaliser (seconds on the ramp per unit penalty).
    merge_wait_reference: float = 20.0
    # Clip for the unbounded log/wait penalties so per-step reward is bounded.
    penalty_floor: float = -5.0

    def validate(self) -> None:
        for name in ("w_crash", "w_speed", "w_headway", "w_merge"):
            if getattr(self, name) < 0.0:
                raise ConfigError(f"{name} must be nonnegative")
        if self.speed_high <= self.speed_low:
            raise ConfigError("speed_high must exceed speed_low")


@dataclass(frozen=True)
class ScenarioConfig:
    """Static description of the merging scenario and all controller knobs."""

    # Road geometry (metres).
    entry_length: float = 220.0
    ramp_length: float = 100.0
    merge_length: float = 100.0
    exit_length: float = 1000.0
    lane_width: float = 4.0
    perception_range: float = 150.0

    # Vehicle geometry and limits.
    vehicle_length: float = 5.0
    vehicle_width: float = 2.0
    steer_max: float = 0.7853981633974483  # pi/4
    # Per-substep clamp on how far the velocity direction may rotate. Bounds
    # every vehicle's one-step lateral manoeuvre, which is what lets the
    # shield lower-bound an observed vehicle's longitudinal advance.
    direction_slew: float = 0.05

    # Behavioural layer.
    behaviour_hz: float = 5.0
    motion_hz: float = 15.0
    speed_step: float = 2.0  # target-speed increment per speed action

    # Feedback controller gains.
    gain_speed: float = 2.0
    gain_lateral: float = 2.5
    lateral_speed_max: float = 3.2
    speed_floor: float = 1.0
    # Cap on the commanded travel-direction angle: keeps slow vehicles from
    # crabbing at extreme angles, which would let a rotated footprint sweep
    # far outside its lane band.
    direction_cap: float = 0.35

    # Spawn bands.
    spawn_region: float = 320.0
    highway_speed_band: tuple[float, float] = (25.0, 30.0)
    ramp_speed_band: tuple[float, float] = (10.0, 15.0)

    # Observation.
    n_observed: int = 5

    # Policy selection (overridable from the CLI).
    policy: str = "keep_lane_cruise"

    shield: ShieldConfig = field(default_factory=ShieldConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)

    def validate(self) -> None:
        for name in ("entry_length", "ramp_length", "merge_length", "exit_length"):
            if getattr(self, name) <= 0.0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.lane_width <= 0.0:
            raise ConfigError("lane_width must be positive")
        if self.vehicle_length <= 0.0 or self.vehicle_width <= 0.0:
            raise ConfigError("vehicle geometry must be positive")
        if self.perception_range <= 0.0:
            raise ConfigError("perception_range must be positive")
        sub = self.motion_hz / self.behaviour_hz
        if abs(sub - round(sub)) > 1e-9 or round(sub) < 1:
            raise ConfigError(
                f"motion_hz must be an integer multiple of behaviour_hz, got {self.motion_hz}/{self.behaviour_hz}"
            )
        if abs(self.shield.dt - 1.0 / self.motion_hz) > 1e-12:
            raise ConfigError("shield.dt must equal 1/motion_hz")
        if self.n_observed < 1:
            raise ConfigError("n_observed must be at least 1")
        self.shield.validate()
        self.reward.validate()

    @property
    def substeps_per_decision(self) -> int:
        return round(self.motion_hz / self.behaviour_hz)

    @property
    def dt(self) -> float:
        return self.shield.dt


DENSITY_BANDS: dict[str, tuple[int, int]] = {
    "light": (2, 6),
    "moderate": (4, 8),
}


@dataclass(frozen=True)
class EpisodeConfig:
    """Per-episode settings: traffic density band, seed and horizon."""

    density: str = "moderate"
    seed: int = 0
    # Unique index mixed into the RNG stream so one seed spans many episodes.
    episode_index: int = 0
    max_steps_after_merge: int = 100
    spawn_spacing: float = 50.0
    # Hard cap on behavioural steps, a safety net against stalled episodes.
    max_behaviour_steps: int = 600

    def validate(self) -> None:
        if self.density not in DENSITY_BANDS:
            raise ConfigError(
                f"density must be one of {sorted(DENSITY_BANDS)}, got {self.density!r}"
            )
        if self.spawn_spacing <= 0.0:
            raise ConfigError("spawn_spacing must be positive")
        if self.max_steps_after_merge < 1:
            raise ConfigError("max_steps_after_merge must be at least 1")


def _coerce(value: Any, target: Any) -> Any:
    if isinstance(target, bool):
        return bool(value)
    if isinstance(target, float):
        return float(value)
    if isinstance(target, int):
        return int(value)
    if isinstance(target, tuple):
        seq = list(value)
        if len(seq) != len(target):
            raise ConfigError(f"expected {len(target)} values, got {seq!r}")
        return tuple(float(v) for v in seq)
    return value


def _apply_overrides(base: Any, overrides: Mapping[str, Any]) -> Any:
    names = {f.name: f for f in dataclasses.fields(base)}
    updates: dict[str, Any] = {}
    for key, value in overrides.items():
        if key not in names:
            raise ConfigError(f"unknown config key {key!r} for {type(base).__name__}")
        current = getattr(base, key)
        if dataclasses.is_dataclass(current):
            if not isinstance(value, Mapping):
                raise ConfigError(f"{key!r} expects a mapping of sub-keys")
            updates[key] = _apply_overrides(current, value)
        else:
            updates[key] = _coerce(value, current)
    return dataclasses.replace(base, **updates)


def _nest_dotted(flat: Mapping[str, Any]) -> dict[str, Any]:
    nested: dict[str, Any] = {}
    for key, value in flat.items():
        parts = str(key).split(".")
        node = nested
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"conflicting keys around {key!r}")
        node[parts[-1]] = value
    return nested


def scenario_from_mapping(mapping: Mapping[str, Any]) -> ScenarioConfig:
    """Build a validated ScenarioConfig from a (possibly dotted) mapping."""
    cfg = _apply_overrides(ScenarioConfig(), _nest_dotted(mapping))
    cfg.validate()
    return cfg


def load_scenario(path: str | Path | None) -> ScenarioConfig:
    """Load a scenario file (flat YAML key-value mapping); None gives defaults."""
    if path is None:
        cfg = ScenarioConfig()
        cfg.validate()
        return cfg
    text = Path(path).read_text()
    data = yaml.safe_load(text)
    if data is None:
        data = {}
    if not isinstance(data, Mapping):
        raise ConfigError(f"scenario file {path} must contain a key-value mapping")
    return scenario_from_mapping(data)
