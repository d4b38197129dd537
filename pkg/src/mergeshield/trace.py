"""Per-substep trace records: the audit surface for safety analysis."""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Optional

TRACE_SCHEMA = "mergeshield.step_trace"
TRACE_VERSION = 1


@dataclass(frozen=True, slots=True)
class StepTrace:
    """One record per (vehicle, motion substep).

    Captures the raw and shielded controls, the barrier values seen by the
    shield, the QP slack and the instantaneous time headway, so any safety
    claim can be re-checked offline from the trace alone.
    """

    episode_id: int
    behaviour_step: int
    sub_step: int
    vehicle_id: int
    x: float
    y: float
    v_x: float
    v_y: float
    psi: float
    speed: float
    lane: int
    accel_raw: float
    steer_raw: float
    accel_safe: float
    steer_safe: float
    longitudinal_corrected: bool
    lateral_vetoed: bool
    h_leading: Optional[float]
    h_target_leading: Optional[float]
    h_target_rear: Optional[float]
    slack: float
    headway: Optional[float]
    leader_id: Optional[int]


TRACE_FIELDS = tuple(f.name for f in fields(StepTrace))
