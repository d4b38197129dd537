"""Kinematic bicycle model: slip angle, state integration, control limits.

The integrator advances velocity first and then position with the updated
velocity, so a controller that picks the next-step speed knows the next-step
position exactly. The velocity vector is carried at the heading-plus-slip
direction, with the per-step direction change clamped to
``direction_slew``; that clamp is what lets the safety shield put a hard
floor under any observed vehicle's next longitudinal advance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True, slots=True)
class VehicleGeometry:
    """Physical footprint of a vehicle."""

    length: float = 5.0
    width: float = 2.0

    def __post_init__(self) -> None:
        if self.length <= 0.0 or self.width <= 0.0:
            raise ValueError("vehicle geometry must be positive")


@dataclass(frozen=True, slots=True)
class ControlInput:
    """Commanded acceleration (m/s^2) and steering angle (rad)."""

    accel: float
    steering: float


@dataclass(frozen=True, slots=True)
class VehicleState:
    """Planar kinematic state: position, velocity components and heading.

    ``speed`` is the cached Euclidean norm of (v_x, v_y); ``psi`` is the
    heading relative to the road axis and stays within (-pi/2, pi/2) for
    any vehicle driving forward.
    """

    x: float
    y: float
    v_x: float
    v_y: float
    psi: float
    speed: float

    @staticmethod
    def create(x: float, y: float, speed: float, psi: float = 0.0) -> "VehicleState":
        """State with the velocity vector aligned to the heading."""
        if speed < 0.0:
            raise ValueError(f"speed must be nonnegative, got {speed}")
        return VehicleState(
            x=x,
            y=y,
            v_x=speed * math.cos(psi),
            v_y=speed * math.sin(psi),
            psi=psi,
            speed=speed,
        )

    def direction(self) -> float:
        """Angle of the velocity vector; falls back to heading at standstill."""
        if self.speed <= 1e-12:
            return self.psi
        return math.atan2(self.v_y, self.v_x)


def slip_angle(steering: float) -> float:
    """Slip angle at the centre of gravity for a given steering angle.

    beta = atan(tan(steering) / 2); odd in the steering angle and always
    smaller in magnitude.
    """
    if not abs(steering) < math.pi / 2:
        raise ValueError(f"steering angle must satisfy |delta| < pi/2, got {steering}")
    return math.atan(0.5 * math.tan(steering))


def clamp(value: float, lo: float, hi: float) -> float:
    if value < lo:
        return lo
    if value > hi:
        return hi
    return value


def one_step_direction(
    state: VehicleState,
    steering: float,
    geometry: VehicleGeometry,
    dt: float,
    direction_slew: float,
) -> float:
    """Velocity direction the vehicle will carry after one integration step.

    Heading advances by (2 v / length) sin(beta) dt, the velocity direction
    targets heading-plus-slip, and the change from the current direction is
    clamped to +-direction_slew. Shared by the integrator and the shield so
    the shield's one-step position lookahead is exact.
    """
    beta = slip_angle(steering)
    new_psi = state.psi + (2.0 * state.speed / geometry.length) * math.sin(beta) * dt
    desired = new_psi + beta
    if state.speed <= 1e-12:
        return desired
    current = math.atan2(state.v_y, state.v_x)
    return clamp(desired, current - direction_slew, current + direction_slew)


def step_kinematics(
    state: VehicleState,
    control: ControlInput,
    geometry: VehicleGeometry,
    dt: float,
    speed_max: float = 40.0,
    direction_slew: float = 0.05,
) -> VehicleState:
    """Advance one step: speed from acceleration, then position from the
    updated velocity.

    Speed is clamped to [0, speed_max] (no reverse driving); if the new
    velocity would point backwards along the road the vehicle stops instead.
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    beta = slip_angle(control.steering)
    new_speed = clamp(state.speed + control.accel * dt, 0.0, speed_max)
    new_psi = state.psi + (2.0 * state.speed / geometry.length) * math.sin(beta) * dt
    new_dir = one_step_direction(state, control.steering, geometry, dt, direction_slew)
    v_x = new_speed * math.cos(new_dir)
    v_y = new_speed * math.sin(new_dir)
    if v_x < 0.0:
        # Backward travel relative to the road is not modelled.
        v_x = 0.0
        v_y = 0.0
        new_speed = 0.0
    return VehicleState(
        x=state.x + v_x * dt,
        y=state.y + v_y * dt,
        v_x=v_x,
        v_y=v_y,
        psi=new_psi,
        speed=new_speed,
    )


def velocity_bounds(
    current_speed: float,
    accel_min: float,
    accel_max: float,
    dt: float,
    speed_max: float = 40.0,
) -> tuple[float, float]:
    """Speed range reachable in one step, intersected with [0, speed_max]."""
    if accel_min >= accel_max:
        raise ValueError(f"need accel_min < accel_max, got [{accel_min}, {accel_max}]")
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    v_min = clamp(current_speed + accel_min * dt, 0.0, speed_max)
    v_max = clamp(current_speed + accel_max * dt, 0.0, speed_max)
    return v_min, v_max
