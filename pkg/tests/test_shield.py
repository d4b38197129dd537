import math
from dataclasses import dataclass, replace

import pytest
from hypothesis import given, strategies as st

from mergeshield.config import ScenarioConfig, ShieldConfig
from mergeshield.road import HIGHWAY, RAMP, NeighborTopology, build_merging_layout
from mergeshield.shield import (
    barrier_value,
    buffer_distance,
    build_longitudinal_constraint,
    lateral_safe_to_change,
    safe_distance,
    shield,
    shield_longitudinal,
    worst_case_advance_floor,
)
from mergeshield.vehicle import ControlInput, VehicleGeometry, VehicleState, clamp

CFG = ShieldConfig()
SCN = ScenarioConfig()
DT = CFG.dt


@dataclass
class Car:
    vehicle_id: int
    state: VehicleState
    geometry: VehicleGeometry = VehicleGeometry()
    lane: int = HIGHWAY

    @property
    def x(self):
        return self.state.x

    @property
    def length(self):
        return self.geometry.length


def car(vid, x, speed, y=0.0, lane=HIGHWAY, psi=0.0):
    return Car(vid, VehicleState.create(x=x, y=y, speed=speed, psi=psi), lane=lane)


def test_buffer_and_safe_distance_values():
    x_safe, x_buff = safe_distance(20.0, CFG)
    assert x_buff == pytest.approx(0.17, abs=1e-12)
    assert x_safe == pytest.approx(10.17, abs=1e-12)
    x_safe0, x_buff0 = safe_distance(0.0, CFG)
    assert x_safe0 == x_buff0 == pytest.approx(0.17, abs=1e-12)


def test_buffer_linear_in_accel_max():
    doubled = replace(CFG, accel_max=10.0)
    gain = buffer_distance(doubled) - buffer_distance(CFG)
    # (a_max_new - a_max_old) * dt * tau = 5 * (1/15) * 0.5
    assert gain == pytest.approx(5.0 * DT * 0.5, abs=1e-12)
    for speed in (0.0, 13.0, 31.0):
        d0, _ = safe_distance(speed, CFG)
        d1, _ = safe_distance(speed, doubled)
        assert d1 - d0 == pytest.approx(gain, abs=1e-12)


def test_boundary_of_safe_set_allows_only_non_advancing():
    # Ego stopped behind a stopped leader at exactly the buffer distance:
    # h_now = 0 and the constraint admits only w <= 0.
    leader = car(1, 100.0, 0.0)
    ego = VehicleState.create(0.0, 0.0, 0.0)
    ev = build_longitudinal_constraint(
        ego, leader, buffer_distance(CFG), CFG, v_ll=0.0, ego_cos=1.0
    )
    assert ev.h == pytest.approx(0.0, abs=1e-12)
    assert ev.constraint.a > 0.0
    assert ev.constraint.b == pytest.approx(0.0, abs=1e-12)


def test_far_leader_constraint_inactive_at_zero_correction():
    leader = car(1, 205.0, 20.0)
    ego = VehicleState.create(0.0, 0.0, 20.0)
    ev = build_longitudinal_constraint(ego, leader, 200.0, CFG, v_ll=20.0, ego_cos=1.0)
    assert ev.constraint.b >= 0.0
    assert ev.constraint.b == pytest.approx(6.145614230295632, abs=1e-9)


def test_overlap_forces_braking_rhs_negative():
    leader = car(1, 3.0, 10.0)
    ego = VehicleState.create(0.0, 0.0, 10.0)
    ev = build_longitudinal_constraint(ego, leader, -2.0, CFG, v_ll=10.0, ego_cos=1.0)
    assert ev.h < 0.0
    assert ev.constraint.b < 0.0


def test_worst_case_floor_properties():
    # Stopped leader cannot retreat: floor 0.
    assert worst_case_advance_floor(0.0, 0.0, CFG.worst_case_leader_accel, CFG, 0.05) == 0.0
    # Straight leader: speed drop by |a_min| dt.
    floor = worst_case_advance_floor(20.0, 0.0, -5.0, CFG, 0.05)
    assert floor == pytest.approx((20.0 - 5.0 * DT) * math.cos(0.05), abs=1e-12)
    # Beyond a quarter turn the floor collapses to zero, never negative.
    assert worst_case_advance_floor(20.0, 1.6, -5.0, CFG, 0.05) == pytest.approx(0.0, abs=1e-12)


def test_shield_longitudinal_no_leader_identity():
    ego = car(0, 0.0, 20.0)
    res = shield_longitudinal(ego, [], 3.0, CFG, ego_cos=1.0)
    assert res.a_safe == 3.0
    assert res.v_cbf == 0.0 and res.slack == 0.0
    # Raw acceleration beyond the limits is clamped.
    res = shield_longitudinal(ego, [], 9.0, CFG, ego_cos=1.0)
    assert res.a_safe == CFG.accel_max


def test_shield_longitudinal_far_leader_identity():
    ego = car(0, 0.0, 20.0)
    leader = car(1, 205.0, 20.0)
    res = shield_longitudinal(ego, [(leader, 200.0)], CFG.accel_max, CFG, ego_cos=1.0)
    assert res.a_safe == CFG.accel_max
    assert res.v_cbf == 0.0
    assert res.slack == 0.0


def test_shield_longitudinal_closing_brakes_and_keeps_invariance():
    # Ego 25 m/s behind a 15 m/s leader at a 30 m bumper gap, requesting +2.
    ego = car(0, 0.0, 25.0)
    leader = car(1, 35.0, 15.0)
    res = shield_longitudinal(ego, [(leader, 30.0)], 2.0, CFG, ego_cos=1.0)
    assert res.a_safe < 2.0
    assert res.slack == 0.0
    # One realized step with the leader actually cruising at 15:
    w = res.v_ll + res.v_cbf
    gap_next = 30.0 + (15.0 - w) * DT
    h_now = barrier_value(30.0, 25.0, CFG)
    h_next = barrier_value(gap_next, w, CFG)
    assert h_next + (CFG.zero_order_coeff - 1.0) * h_now >= 0.0
    assert gap_next / w >= CFG.time_headway


def test_shield_longitudinal_unsafe_start_max_brakes_with_slack():
    # Start already inside the unsafe region: the box cannot restore the
    # condition in one step, so the slack activates and braking saturates.
    ego = car(0, 0.0, 25.0)
    leader = car(1, 17.0, 15.0)
    res = shield_longitudinal(ego, [(leader, 12.0)], 2.0, CFG, ego_cos=1.0)
    assert res.a_safe == pytest.approx(CFG.accel_min, abs=1e-9)
    assert res.status == "slack_active"
    assert res.slack > 0.0


def test_monotone_override_only_brakes():
    ego = car(0, 0.0, 25.0)
    for gap in (20.0, 30.0, 50.0, 120.0):
        leader = car(1, gap + 5.0, 15.0)
        for a_ll in (-2.0, 0.0, 2.0, 5.0):
            res = shield_longitudinal(ego, [(leader, gap)], a_ll, CFG, ego_cos=1.0)
            assert res.a_safe <= clamp(a_ll, CFG.accel_min, CFG.accel_max) + 1e-12


def test_stacked_rows_use_most_restrictive():
    ego = car(0, 0.0, 25.0)
    near = car(1, 35.0, 15.0)
    far = car(2, 205.0, 30.0)
    only_near = shield_longitudinal(ego, [(near, 30.0)], 5.0, CFG, ego_cos=1.0)
    both = shield_longitudinal(ego, [(near, 30.0), (far, 200.0)], 5.0, CFG, ego_cos=1.0)
    assert both.a_safe == pytest.approx(only_near.a_safe, abs=1e-12)
    assert len(both.rows) == 2


@given(
    st.floats(min_value=0.0, max_value=39.0),
    st.floats(min_value=0.0, max_value=39.0),
    st.floats(min_value=5.0, max_value=120.0),
    st.floats(min_value=-8.0, max_value=8.0),
)
def test_longitudinal_model_invariance_one_step(ego_speed, lead_speed, gap, a_ll):
    """Whatever the raw request, the solved speed keeps the worst-case model
    barrier chain unless the slack is active."""
    ego = car(0, 0.0, ego_speed)
    leader = car(1, gap + 5.0, lead_speed)
    res = shield_longitudinal(ego, [(leader, gap)], a_ll, CFG, ego_cos=1.0)
    if res.slack > 1e-9:
        return
    w = res.v_ll + res.v_cbf
    lead_adv = worst_case_advance_floor(
        lead_speed, 0.0, CFG.worst_case_leader_accel, CFG, 0.05
    )
    gap_next = gap + (lead_adv - w) * DT
    h_now = barrier_value(gap, ego_speed, CFG)
    h_next = barrier_value(gap_next, w, CFG)
    assert h_next + (CFG.zero_order_coeff - 1.0) * h_now >= -1e-9


def brute_force_braking_feasible(h0, w, u, config):
    """Step-by-step sweep of the joint-max-braking future (reference)."""
    from mergeshield.shield import _future_barrier

    if h0 < 0.0:
        return False
    if w <= 0.0:
        return True
    q = -config.accel_min * config.dt
    j_end = math.ceil(w / q) + 2
    h_prev = h0
    for j in range(1, j_end + 1):
        h_j = _future_barrier(h0, w, u, j, q, config.dt, config.time_headway)
        if h_j + (config.zero_order_coeff - 1.0) * h_prev < 0.0:
            return False
        h_prev = h_j
    return True


@given(
    st.floats(min_value=0.0, max_value=41.0),
    st.floats(min_value=0.0, max_value=41.0),
    st.floats(min_value=-5.0, max_value=140.0),
)
def test_braking_feasible_matches_brute_force(w, u, h0):
    from mergeshield.shield import braking_feasible

    assert braking_feasible(h0, w, u, CFG) == brute_force_braking_feasible(h0, w, u, CFG)


def test_braking_feasible_matches_brute_force_dense_boundary():
    import numpy as np

    from mergeshield.shield import braking_feasible

    rng = np.random.default_rng(314)
    for _ in range(20000):
        w = float(rng.uniform(0.0, 41.0))
        u = float(rng.uniform(0.0, max(0.1, w)))
        base = max(0.0, (w * w - u * u) / (2.0 * -CFG.accel_min))
        h0 = max(0.0, base + float(rng.uniform(-8.0, 8.0)))
        assert braking_feasible(h0, w, u, CFG) == brute_force_braking_feasible(h0, w, u, CFG)


def test_certified_cap_far_leader_unbinding():
    from mergeshield.shield import certified_speed_cap

    cap = certified_speed_cap(300.0, 20.0, 1.0, 24.667, 25.333, CFG)
    assert cap == 25.333


def test_certified_cap_braking_when_closing_fast():
    from mergeshield.shield import braking_feasible, certified_speed_cap, buffer_distance

    # Ego box around 30 m/s closing on a 10 m/s leader at a 95 m gap: the
    # certificate boundary falls inside the box, the capped state is
    # certifiable and anything faster is not.
    v_min, v_max = 29.667, 30.333
    cap = certified_speed_cap(95.0, 10.0, 1.0, v_min, v_max, CFG)
    assert v_min < cap < v_max

    def h0(w):
        return 95.0 + (10.0 - w) * CFG.dt - (CFG.time_headway * w + buffer_distance(CFG)) - CFG.braking_margin

    assert braking_feasible(h0(cap), cap, 10.0, CFG)
    assert not braking_feasible(h0(cap + 2e-4), cap + 2e-4, 10.0, CFG)

    # At a 40 m gap the state is beyond any feasible certificate: the cap
    # saturates at full braking (the slack accounting covers that regime).
    assert certified_speed_cap(40.0, 10.0, 1.0, v_min, v_max, CFG) == v_min


def topo(leading=None, target_leading=None, target_rear=None, ego=None):
    from mergeshield.road import longitudinal_gap

    return NeighborTopology(
        leading=leading,
        target_leading=target_leading,
        target_rear=target_rear,
        gap_leading=longitudinal_gap(ego, leading) if leading else math.inf,
        gap_target_leading=longitudinal_gap(ego, target_leading) if target_leading else math.inf,
        gap_target_rear=longitudinal_gap(target_rear, ego) if target_rear else math.inf,
    )


def test_lateral_empty_target_lane_is_safe():
    ego = car(0, 350.0, 20.0, y=-4.0, lane=RAMP)
    check = lateral_safe_to_change(ego, topo(ego=ego), 20.0, CFG, ego_cos=1.0)
    assert check.safe
    assert check.h_target_leading is None and check.h_target_rear is None


def test_lateral_close_fast_rear_blocks():
    # Rear vehicle 2 m behind at 30 m/s: its safe distance (~15.17 m) far
    # exceeds the gap, so the change must be refused.
    ego = car(0, 350.0, 20.0, y=-4.0, lane=RAMP)
    rear = car(1, 343.0, 30.0)  # bumper gap 2 m
    check = lateral_safe_to_change(ego, topo(target_rear=rear, ego=ego), 20.0, CFG, ego_cos=1.0)
    assert not check.safe
    assert check.h_target_rear == pytest.approx(2.0 - 15.17, abs=1e-9)


def test_lateral_wide_gaps_allow():
    ego = car(0, 350.0, 22.0, y=-4.0, lane=RAMP)
    lead = car(1, 455.0, 25.0)  # 100 m bumper gap ahead
    rear = car(2, 245.0, 25.0)  # 100 m bumper gap behind
    check = lateral_safe_to_change(
        ego, topo(target_leading=lead, target_rear=rear, ego=ego), 22.0, CFG, ego_cos=1.0
    )
    assert check.safe
    assert check.h_target_leading == pytest.approx(100.0 - (0.5 * 22.0 + 0.17), abs=1e-9)
    assert check.h_target_rear == pytest.approx(100.0 - (0.5 * 25.0 + 0.17), abs=1e-9)


def test_lateral_negative_barrier_recovery_still_refused():
    # Ego pulling away fast enough that the decay condition alone would pass
    # (the barrier is recovering), but the one-step worst-case barrier stays
    # deep below zero: initiating here would hand the rear vehicle an unsafe
    # headway the moment the lane membership flips, so the gate refuses.
    ego = car(0, 350.0, 40.0, y=-4.0, lane=RAMP)
    rear = car(1, 340.0, 30.0)  # bumper gap 5 m, rear x_safe = 15.17
    check = lateral_safe_to_change(ego, topo(target_rear=rear, ego=ego), 40.0, CFG, ego_cos=1.0)
    assert check.h_target_rear == pytest.approx(-10.17, abs=1e-9)
    assert not check.safe


def test_lateral_marginal_escape_blocked_by_margin():
    # Ego outrunning the rear vehicle hard, but the rear's inherited barrier
    # at the handover would start right at the boundary: inside the braking
    # margin, so the gate stays closed.
    ego = car(0, 350.0, 30.0, y=-4.0, lane=RAMP)
    rear = car(1, 339.0, 12.0)  # gap 6 m, rear x_safe = 6.17
    check = lateral_safe_to_change(ego, topo(target_rear=rear, ego=ego), 30.0, CFG, ego_cos=1.0)
    assert check.h_target_rear < 0.0
    assert not check.safe


def test_lateral_escape_with_real_margin_allowed():
    # Same escape geometry with a few metres of real margin passes.
    ego = car(0, 350.0, 30.0, y=-4.0, lane=RAMP)
    rear = car(1, 334.0, 12.0)  # gap 11 m
    check = lateral_safe_to_change(ego, topo(target_rear=rear, ego=ego), 30.0, CFG, ego_cos=1.0)
    assert check.safe


def make_world(scn=SCN):
    layout = build_merging_layout(scn)
    return layout


def test_shield_lane_keeping_passthrough():
    layout = make_world()
    ego = car(0, 100.0, 25.0)
    lead = car(1, 200.0, 25.0)
    raw = ControlInput(accel=1.5, steering=0.01)
    decision = shield(ego, [ego, lead], layout, raw, HIGHWAY, 0.0, CFG, SCN)
    assert decision.control.accel == 1.5
    assert decision.control.steering == 0.01
    assert not decision.lateral_vetoed
    assert not decision.longitudinal_corrected


def test_shield_vetoes_unsafe_change_and_still_filters():
    layout = make_world()
    # Ego on the ramp inside the merge section; fast rear vehicle close
    # behind in the highway lane; slow leader ahead on the ramp.
    ego = car(0, 350.0, 20.0, y=-4.0, lane=RAMP)
    rear = car(1, 344.0, 30.0, lane=HIGHWAY)
    ramp_lead = car(2, 362.0, 10.0, y=-4.0, lane=RAMP)
    raw = ControlInput(accel=5.0, steering=0.05)
    decision = shield(ego, [ego, rear, ramp_lead], layout, raw, HIGHWAY, -0.02, CFG, SCN)
    assert decision.lateral_vetoed
    assert decision.control.steering == -0.02
    assert decision.gate_evaluated and not decision.gate_passed
    # Longitudinal still filtered against the ramp leader (gap 7 m, slow).
    assert decision.control.accel < 5.0
    assert decision.leader_id == 2


def test_shield_allows_safe_change_and_stacks_target_leader():
    layout = make_world()
    ego = car(0, 350.0, 22.0, y=-4.0, lane=RAMP)
    hw_lead = car(1, 395.0, 18.0, lane=HIGHWAY)
    hw_rear = car(2, 260.0, 22.0, lane=HIGHWAY)
    raw = ControlInput(accel=2.0, steering=0.03)
    decision = shield(ego, [ego, hw_lead, hw_rear], layout, raw, HIGHWAY, 0.0, CFG, SCN)
    assert decision.gate_evaluated and decision.gate_passed
    assert not decision.lateral_vetoed
    assert decision.control.steering == 0.03
    # No ramp leader, so the only row is the target-lane leader.
    assert len(decision.audit_rows) == 1
    assert decision.audit_rows[0][0] == 1


def test_shield_no_change_outside_merge_section():
    layout = make_world()
    ego = car(0, 250.0, 15.0, y=-4.0, lane=RAMP)  # on ramp before the merge section
    raw = ControlInput(accel=0.0, steering=0.05)
    decision = shield(ego, [ego], layout, raw, HIGHWAY, -0.01, CFG, SCN)
    # Outside the merge section the target is unreachable: the manoeuvre is
    # vetoed and steering reverts to the lane-keeping command.
    assert not decision.gate_evaluated
    assert decision.lateral_vetoed
    assert decision.control.steering == -0.01
