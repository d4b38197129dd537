"""The hybrid safety shield: barrier-constrained longitudinal filtering and
rule-based lateral gating.

Longitudinal: the raw acceleration is converted to a one-step target speed,
a barrier constraint per relevant leader is stacked into a small QP over the
scalar speed correction, and the minimally corrected speed is converted back
to an acceleration. The barrier for a leader at bumper gap ``g`` is

    h = g - (time_headway * ego_speed + buffer)

and each step must satisfy ``h_next + (zero_order_coeff - 1) * h_now >= 0``.
The one-step lookahead is exact on the ego side (the integrator realises the
chosen speed and direction precisely) and worst-case on the observed side
(full braking plus the maximal direction rotation the integrator permits),
so a trajectory that starts safe stays safe under any behavioural policy.

Lateral: a lane change is permitted only while the same invariance condition
holds for the target-lane leader and rear vehicle, with the rear vehicle
assumed at full acceleration. A failed check mid-manoeuvre reverts steering
towards the current lane centre.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

from mergeshield.config import ScenarioConfig, ShieldConfig
from mergeshield.qp import ShieldQP, solve_shield_qp
from mergeshield.road import NeighborTopology, RoadLayout, identify_neighbors
from mergeshield.vehicle import (
    ControlInput,
    VehicleState,
    clamp,
    one_step_direction,
    velocity_bounds,
)

HALF_PI = math.pi / 2


@dataclass(frozen=True, slots=True)
class AffineConstraint:
    """One barrier row ``a * correction <= b`` on the speed correction."""

    a: float
    b: float


@dataclass(frozen=True, slots=True)
class BarrierEvaluation:
    """Barrier value and derived quantities for one ego-leader pair."""

    h: float
    constraint: AffineConstraint
    safe_distance: float
    buffer: float


def buffer_distance(config: ShieldConfig) -> float:
    """Cushion added to the safe distance so the headway bound survives the
    threshold growing while the ego accelerates."""
    return (config.accel_max + 0.1) * config.dt * config.time_headway


def safe_distance(speed: float, config: ShieldConfig) -> tuple[float, float]:
    """(x_safe, x_buff): distance the ego must keep at the given speed."""
    x_buff = buffer_distance(config)
    return config.time_headway * speed + x_buff, x_buff


def barrier_value(gap: float, speed: float, config: ShieldConfig) -> float:
    """h = gap - safe distance at the given follower speed."""
    x_safe, _ = safe_distance(speed, config)
    return gap - x_safe


def worst_case_advance_floor(
    speed: float,
    direction: float,
    accel: float,
    config: ShieldConfig,
    direction_slew: float,
) -> float:
    """Lower bound on an observed vehicle's next longitudinal velocity.

    The integrator clamps speed to [0, speed_max] and rotates the velocity
    direction by at most ``direction_slew`` per step, so with the vehicle
    braking at ``accel`` its next x-velocity cannot fall below this value.
    """
    v_next = max(0.0, speed + accel * config.dt)
    angle = min(abs(direction) + direction_slew, HALF_PI)
    return v_next * math.cos(angle)


def worst_case_advance_ceiling(
    speed: float,
    direction: float,
    accel: float,
    config: ShieldConfig,
    direction_slew: float,
) -> float:
    """Upper bound on an observed vehicle's next longitudinal velocity
    (it accelerates at ``accel`` and straightens as far as one step allows)."""
    v_next = max(0.0, speed + accel * config.dt)
    angle = max(abs(direction) - direction_slew, 0.0)
    return v_next * math.cos(angle)


def _future_barrier(
    h0: float, w: float, u: float, j: int, q: float, dt: float, tau: float
) -> float:
    """Barrier value j steps into the joint maximal-braking future.

    From the post-step state (barrier h0, ego speed w, leader speed u), both
    vehicles brake by q per step (clamped at zero) and the ego's safe
    distance shrinks with its speed. Each braked-speed sum
    ``sum_{i=1..j} max(0, v - i*q)`` is evaluated in closed form.
    """
    if u > 0.0:
        m = math.ceil(u / q) - 1
        if m > j:
            m = j
        sum_u = u * m - q * m * (m + 1) * 0.5 if m > 0 else 0.0
    else:
        sum_u = 0.0
    w_j = w - j * q
    if w_j < 0.0:
        w_j = 0.0
    m = math.ceil(w / q) - 1
    if m > j:
        m = j
    sum_w = w * m - q * m * (m + 1) * 0.5 if m > 0 else 0.0
    return h0 + (sum_u - sum_w) * dt + tau * (w - w_j)


def braking_feasible(h0: float, w: float, u: float, config: ShieldConfig) -> bool:
    """True when the barrier condition stays satisfiable along the entire
    joint maximal-braking future from the post-step state (h0, w, u).

    The condition sequence is piecewise linear/quadratic in the future step
    index with nonnegative curvature, so checking the regime boundaries and
    the quadratic vertex is exact; a brute-force sweep over every step
    agrees with this check (property-tested).
    """
    if h0 < 0.0:
        return False
    if w <= 0.0:
        return True
    dt = config.dt
    tau = config.time_headway
    eta = config.zero_order_coeff
    q = -config.accel_min * dt
    if w - u <= tau * (q / dt):
        # Closing below the headway-shrink rate: the barrier never decays
        # along the braking future.
        return True
    n_w = math.ceil(w / q) - 1
    if n_w < 0:
        n_w = 0
    n_u = math.ceil(u / q) - 1 if u > 0.0 else 0
    if n_u < 0:
        n_u = 0
    # Vertex of the leader-stopped regime, where the condition is quadratic.
    jf = math.floor(1.0 + (w - q / eta - tau * (q / dt)) / q)
    j_end = n_w + 2
    # Most-likely-binding candidates first so infeasible states exit early.
    seen = set()
    cache: dict[int, float] = {0: h0}
    for j in (
        jf,
        jf + 1,
        jf + 2,
        n_u - 1,
        n_u,
        n_u + 1,
        n_u + 2,
        n_w - 1,
        n_w,
        n_w + 1,
        n_w + 2,
        1,
        2,
    ):
        if j < 1 or j > j_end or j in seen:
            continue
        seen.add(j)
        h_j = cache.get(j)
        if h_j is None:
            h_j = _future_barrier(h0, w, u, j, q, dt, tau)
            cache[j] = h_j
        h_prev = cache.get(j - 1)
        if h_prev is None:
            h_prev = _future_barrier(h0, w, u, j - 1, q, dt, tau)
            cache[j - 1] = h_prev
        if h_j + (eta - 1.0) * h_prev < 0.0:
            return False
    return True


def certified_speed_cap(
    gap: float,
    leader_next_speed: float,
    ego_cos: float,
    v_min: float,
    v_max: float,
    config: ShieldConfig,
) -> float:
    """Largest next-step speed in [v_min, v_max] whose post-step state keeps
    the barrier condition satisfiable under joint maximal braking.

    The guard is what makes the per-step condition recursively feasible: a
    follower may otherwise build up closing speed faster than the one-step
    acceleration box can shed it, leaving the QP no admissible correction a
    few steps later. Returns v_min when even full braking cannot certify
    (the slack accounting of the barrier rows covers that regime).
    """
    dt = config.dt
    tau = config.time_headway
    margin = config.braking_margin
    u = leader_next_speed
    x_buff = buffer_distance(config)

    def h0(w: float) -> float:
        gap_next = gap + (u - w * ego_cos) * dt
        return gap_next - (tau * w + x_buff) - margin

    # Generous sufficient gap: the barrier exceeds the ego's full stopping
    # sum plus the per-step decay allowance, so no detailed check is needed.
    a = -config.accel_min
    if h0(v_max) >= v_max * v_max / (2.0 * a) + v_max * dt / config.zero_order_coeff:
        return v_max
    if braking_feasible(h0(v_max), v_max, u, config):
        return v_max
    if not braking_feasible(h0(v_min), v_min, u, config):
        return v_min
    lo, hi = v_min, v_max
    for _ in range(16):
        mid = 0.5 * (lo + hi)
        if braking_feasible(h0(mid), mid, u, config):
            lo = mid
        else:
            hi = mid
    return lo


def build_longitudinal_constraint(
    ego: VehicleState,
    leader,
    gap: float,
    config: ShieldConfig,
    *,
    v_ll: float,
    ego_cos: float,
    direction_slew: float = 0.05,
) -> BarrierEvaluation:
    """Barrier row for one leader, affine in the ego speed correction.

    With candidate next speed ``w = v_ll + correction`` the predicted next
    barrier is

        h_next(w) = gap + lead_adv*dt - w*ego_cos*dt - (tau*w + x_buff)

    where ``lead_adv`` is the leader's worst-case next x-velocity. Requiring
    ``h_next(w) >= (1 - eta) * h_now`` and moving to the correction variable
    gives one row ``a * correction <= b``.
    """
    dt = config.dt
    tau = config.time_headway
    eta = config.zero_order_coeff
    x_safe_now, x_buff = safe_distance(ego.speed, config)
    h_now = gap - x_safe_now
    lead_adv = worst_case_advance_floor(
        leader.state.speed,
        leader.state.direction(),
        config.worst_case_leader_accel,
        config,
        direction_slew,
    )
    coeff = ego_cos * dt + tau
    rhs_w = gap + lead_adv * dt - x_buff - (1.0 - eta) * h_now
    return BarrierEvaluation(
        h=h_now,
        constraint=AffineConstraint(a=coeff, b=rhs_w - coeff * v_ll),
        safe_distance=x_safe_now,
        buffer=x_buff,
    )


@dataclass(frozen=True, slots=True)
class LongitudinalResult:
    a_safe: float
    v_ll: float
    v_cbf: float
    slack: float
    status: str
    # (leader id, current barrier value) per stacked constraint row.
    rows: tuple[tuple[int, float], ...]


def shield_longitudinal(
    ego,
    leaders: Sequence[tuple[object, float]],
    raw_accel: float,
    config: ShieldConfig,
    *,
    ego_cos: float,
    direction_slew: float = 0.05,
) -> LongitudinalResult:
    """Filter a raw acceleration against the stacked leader constraints.

    ``leaders`` holds (vehicle, bumper gap) pairs; an empty sequence leaves
    the clamped raw acceleration untouched. The QP decision variable is the
    correction to the one-step target speed; zero correction converts back
    to the clamped raw acceleration exactly.
    """
    a_cl = clamp(raw_accel, config.accel_min, config.accel_max)
    speed = ego.state.speed
    v_ll = speed + a_cl * config.dt
    if not leaders:
        return LongitudinalResult(
            a_safe=a_cl, v_ll=v_ll, v_cbf=0.0, slack=0.0, status="optimal", rows=()
        )
    v_min, v_max = velocity_bounds(
        speed, config.accel_min, config.accel_max, config.dt, config.speed_max
    )
    v_top = v_max
    rows = []
    meta = []
    for leader, gap in leaders:
        ev = build_longitudinal_constraint(
            ego.state,
            leader,
            gap,
            config,
            v_ll=v_ll,
            ego_cos=ego_cos,
            direction_slew=direction_slew,
        )
        rows.append((ev.constraint.a, ev.constraint.b))
        meta.append((leader.vehicle_id, ev.h))
        u1 = worst_case_advance_floor(
            leader.state.speed,
            leader.state.direction(),
            config.worst_case_leader_accel,
            config,
            direction_slew,
        )
        cap = certified_speed_cap(gap, u1, ego_cos, v_min, v_max, config)
        if cap < v_top:
            v_top = cap
    problem = ShieldQP.univariate(rows, v_min - v_ll, v_top - v_ll, config.slack_penalty)
    sol = solve_shield_qp(problem)
    v_cbf = sol.scalar
    if v_cbf == 0.0:
        a_safe = a_cl
    else:
        a_safe = (v_ll + v_cbf - speed) / config.dt
    return LongitudinalResult(
        a_safe=a_safe,
        v_ll=v_ll,
        v_cbf=v_cbf,
        slack=sol.slack,
        status=sol.status,
        rows=tuple(meta),
    )


@dataclass(frozen=True, slots=True)
class LateralCheck:
    safe: bool
    h_target_leading: Optional[float]
    h_target_rear: Optional[float]


def lateral_safe_to_change(
    ego,
    topology: NeighborTopology,
    v_ll: float,
    config: ShieldConfig,
    *,
    ego_cos: float,
    direction_slew: float = 0.05,
) -> LateralCheck:
    """Rule-based gate for a lane change into the topology's target lane.

    Both target-lane barriers must satisfy the invariance condition and stay
    nonnegative one step ahead. The target-leading barrier uses the ego
    speed for the safe distance; the target-rear barrier uses the rear
    vehicle's speed, since that vehicle must retain its own headway once the
    ego is ahead of it. On top of the one-step checks, both new ego-leader
    pairings that the change would create (ego behind the target leader, and
    the target-rear vehicle behind the ego) must admit a feasible braking
    future, so neither party inherits a constraint its acceleration box
    cannot honour. Empty slots pass vacuously.
    """
    dt = config.dt
    tau = config.time_headway
    eta = config.zero_order_coeff
    x_buff = buffer_distance(config)
    margin = config.braking_margin
    ego_adv = max(0.0, v_ll * ego_cos) * dt
    v_min, _ = velocity_bounds(
        ego.state.speed, config.accel_min, config.accel_max, dt, config.speed_max
    )
    safe = True
    h_otl = None
    h_otr = None

    lead = topology.target_leading
    if lead is not None:
        gap = topology.gap_target_leading
        h_otl = gap - (tau * ego.state.speed + x_buff)
        lead_adv = worst_case_advance_floor(
            lead.state.speed,
            lead.state.direction(),
            config.worst_case_leader_accel,
            config,
            direction_slew,
        )
        h_next = gap + lead_adv * dt - ego_adv - (tau * v_ll + x_buff)
        if h_next + (eta - 1.0) * h_otl < 0.0 or h_next < 0.0:
            safe = False
        else:
            # Ego must be able to follow the new leader: certify the braking
            # future from the ego's hardest one-step braking.
            h0 = gap + (lead_adv - v_min * ego_cos) * dt - (tau * v_min + x_buff) - margin
            if not braking_feasible(h0, v_min, lead_adv, config):
                safe = False

    rear = topology.target_rear
    if rear is not None:
        gap = topology.gap_target_rear
        v_rear = rear.state.speed
        h_otr = gap - (tau * v_rear + x_buff)
        rear_adv = worst_case_advance_ceiling(
            v_rear,
            rear.state.direction(),
            config.accel_max,
            config,
            direction_slew,
        )
        v_rear_next = v_rear + config.accel_max * dt
        h_next = gap + ego_adv - rear_adv * dt - (tau * v_rear_next + x_buff)
        if h_next + (eta - 1.0) * h_otr < 0.0 or h_next < 0.0:
            safe = False
        else:
            # The rear vehicle inherits the ego as its leader: its braking
            # future must be feasible even if it accelerates one more step
            # while the ego brakes as hard as its box allows.
            ego_floor = worst_case_advance_floor(
                ego.state.speed,
                ego.state.direction(),
                config.accel_min,
                config,
                direction_slew,
            )
            h0 = (
                gap
                + (ego_floor - rear_adv) * dt
                - (tau * v_rear_next + x_buff)
                - margin
            )
            if not braking_feasible(h0, v_rear_next, ego_floor, config):
                safe = False

    return LateralCheck(safe=safe, h_target_leading=h_otl, h_target_rear=h_otr)


@dataclass(frozen=True, slots=True)
class ShieldDecision:
    """Filtered control plus everything the trace needs for auditing."""

    control: ControlInput
    raw: ControlInput
    lateral_vetoed: bool
    longitudinal_corrected: bool
    h_leading: Optional[float]
    h_target_leading: Optional[float]
    h_target_rear: Optional[float]
    slack: float
    status: str
    leader_id: Optional[int]
    headway: float
    # (leader id, current barrier) per QP row, for the invariance audit.
    audit_rows: tuple[tuple[int, float], ...]
    gate_evaluated: bool = False
    gate_passed: bool = False


def shield(
    ego,
    vehicles: Sequence,
    layout: RoadLayout,
    raw: ControlInput,
    target_lane: int,
    fallback_steering: float,
    config: ShieldConfig,
    scenario: ScenarioConfig,
) -> ShieldDecision:
    """Filter one vehicle's control against the shared world snapshot.

    Pure function of the snapshot: every vehicle's shield call in a substep
    reads the same immutable states, which is what makes the scheme
    decentralised. Steering passes through while lane keeping or while a
    gated lane change stays safe; otherwise it reverts to the lane-keeping
    command towards the current lane centre. The acceleration is always
    filtered against the current-lane leader, plus the target-lane leader
    while a lane change is in progress.
    """
    slew = scenario.direction_slew
    steer_raw = clamp(raw.steering, -scenario.steer_max, scenario.steer_max)
    a_cl = clamp(raw.accel, config.accel_min, config.accel_max)
    v_ll = ego.state.speed + a_cl * config.dt

    wants_change = target_lane != ego.lane
    changing = wants_change and layout.can_change(ego.lane, target_lane, ego.x)
    topo = identify_neighbors(
        ego,
        vehicles,
        layout,
        target_lane if changing else ego.lane,
        include_target=changing,
    )

    vetoed = False
    gate_passed = False
    h_otl = None
    h_otr = None
    cos_raw = None
    if changing:
        cos_raw = math.cos(
            one_step_direction(ego.state, steer_raw, ego.geometry, config.dt, slew)
        )
        check = lateral_safe_to_change(
            ego, topo, v_ll, config, ego_cos=max(0.0, cos_raw), direction_slew=slew
        )
        h_otl = check.h_target_leading
        h_otr = check.h_target_rear
        gate_passed = check.safe
        if check.safe:
            steer = steer_raw
        else:
            steer = clamp(fallback_steering, -scenario.steer_max, scenario.steer_max)
            vetoed = True
    elif wants_change:
        # Target lane no longer reachable (left the merge section midway):
        # the manoeuvre is over, steer back to the current lane.
        steer = clamp(fallback_steering, -scenario.steer_max, scenario.steer_max)
        vetoed = True
    else:
        steer = steer_raw

    leaders: list[tuple[object, float]] = []
    if topo.leading is not None:
        leaders.append((topo.leading, topo.gap_leading))
    if changing and not vetoed and topo.target_leading is not None:
        leaders.append((topo.target_leading, topo.gap_target_leading))

    if steer == steer_raw and cos_raw is not None:
        ego_cos = max(0.0, cos_raw)
    else:
        ego_cos = max(
            0.0,
            math.cos(one_step_direction(ego.state, steer, ego.geometry, config.dt, slew)),
        )
    lon = shield_longitudinal(
        ego, leaders, raw.accel, config, ego_cos=ego_cos, direction_slew=slew
    )

    h_ol = None
    headway = math.inf
    if topo.leading is not None:
        h_ol = barrier_value(topo.gap_leading, ego.state.speed, config)
        if ego.state.speed > 1e-9:
            headway = topo.gap_leading / ego.state.speed

    return ShieldDecision(
        control=ControlInput(accel=lon.a_safe, steering=steer),
        raw=raw,
        lateral_vetoed=vetoed,
        longitudinal_corrected=abs(lon.a_safe - a_cl) > 1e-9,
        h_leading=h_ol,
        h_target_leading=h_otl,
        h_target_rear=h_otr,
        slack=lon.slack,
        status=lon.status,
        leader_id=topo.leading.vehicle_id if topo.leading is not None else None,
        headway=headway,
        audit_rows=lon.rows,
        gate_evaluated=changing,
        gate_passed=gate_passed,
    )
