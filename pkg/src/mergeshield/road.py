"""Merging-scenario road geometry, lane membership and neighbor topology.

The road is a straight highway lane (id 0, centred at y = 0) with an on-ramp
lane (id 1) running parallel below it. The ramp becomes drivable at the end
of the entry segment and connects to the highway only inside the merge
section; a ramp vehicle that passes the end of the merge section without
changing lanes has failed its merge (episode bookkeeping, not a crash).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Protocol, Sequence

from mergeshield.config import ConfigError, ScenarioConfig

HIGHWAY = 0
RAMP = 1


class HasPose(Protocol):
    """Anything with a longitudinal position and a length (for gaps)."""

    x: float
    length: float


@dataclass(frozen=True)
class RoadLayout:
    """Segment lengths and derived landmarks of the merging scenario."""

    entry_length: float
    ramp_length: float
    merge_length: float
    exit_length: float
    lane_width: float
    perception_range: float

    @property
    def total_length(self) -> float:
        return self.entry_length + self.ramp_length + self.merge_length + self.exit_length

    @property
    def ramp_start(self) -> float:
        return self.entry_length

    @property
    def merge_start(self) -> float:
        return self.entry_length + self.ramp_length

    @property
    def merge_end(self) -> float:
        return self.merge_start + self.merge_length

    def lane_center(self, lane: int) -> float:
        if lane == HIGHWAY:
            return 0.0
        if lane == RAMP:
            return -self.lane_width
        raise ValueError(f"unknown lane id {lane}")

    def lanes_at(self, x: float) -> tuple[int, ...]:
        """Lane ids that exist at longitudinal position x.

        The ramp is treated as present from its start onward so that a
        failed-merge straggler still has a lane; drivability past the merge
        end is an episode-level flag, not a geometry property.
        """
        if x >= self.ramp_start:
            return (HIGHWAY, RAMP)
        return (HIGHWAY,)

    def can_change(self, from_lane: int, to_lane: int, x: float) -> bool:
        """Lane change legality: ramp and highway are mutually adjacent only
        inside the merge section."""
        if {from_lane, to_lane} != {HIGHWAY, RAMP}:
            return False
        return self.merge_start <= x <= self.merge_end

    def membership(self, y: float, previous_lane: int) -> int:
        """Lane membership by nearest lane centre with hysteresis.

        The previous lane is kept until the vehicle crosses the midline
        between the two centres by more than 0.2 lane widths, which keeps
        membership from flapping during a lane-change manoeuvre.
        """
        other = RAMP if previous_lane == HIGHWAY else HIGHWAY
        d_prev = abs(y - self.lane_center(previous_lane))
        d_other = abs(y - self.lane_center(other))
        # Crossing the midline by 0.2 lane widths makes the distance
        # difference exceed 0.4 lane widths.
        if d_prev - d_other > 0.4 * self.lane_width:
            return other
        return previous_lane

    def nearest_lane(self, y: float) -> int:
        """Hysteresis-free nearest lane centre (used at spawn)."""
        if abs(y - self.lane_center(HIGHWAY)) <= abs(y - self.lane_center(RAMP)):
            return HIGHWAY
        return RAMP


def build_merging_layout(config: ScenarioConfig) -> RoadLayout:
    """Validated road layout from the scenario configuration."""
    for name in ("entry_length", "ramp_length", "merge_length", "exit_length"):
        if getattr(config, name) <= 0.0:
            raise ConfigError(f"{name} must be positive, got {getattr(config, name)}")
    return RoadLayout(
        entry_length=config.entry_length,
        ramp_length=config.ramp_length,
        merge_length=config.merge_length,
        exit_length=config.exit_length,
        lane_width=config.lane_width,
        perception_range=config.perception_range,
    )


def longitudinal_gap(rear: HasPose, front: HasPose) -> float:
    """Bumper-to-bumper gap: centre distance minus both half-lengths.

    Negative when the footprints overlap longitudinally.
    """
    return (front.x - rear.x) - 0.5 * front.length - 0.5 * rear.length


@dataclass(frozen=True)
class NeighborTopology:
    """The three observed vehicles around an ego vehicle.

    ``leading`` is the nearest vehicle ahead in the ego's own lane;
    ``target_leading``/``target_rear`` are the nearest ahead/behind in the
    target lane. Empty slots carry an infinite gap sentinel.
    """

    leading: Optional[object] = None
    target_leading: Optional[object] = None
    target_rear: Optional[object] = None
    gap_leading: float = math.inf
    gap_target_leading: float = math.inf
    gap_target_rear: float = math.inf


def occupies_lane(vehicle, lane: int, layout: RoadLayout) -> bool:
    """Whether the vehicle's body band overlaps the lane's band.

    Judged from the centre position and width only: a vehicle partway
    through a lane change occupies both lanes, so followers in either lane
    treat it as a leader, while lane membership (a single-lane partition)
    stays separate. Deliberately rotation-independent: a heading change must
    not conjure new leader pairings out of thin air - lateral translation
    is what creates them, and translation across lanes passes through the
    gated lane-change path.
    """
    return (
        abs(vehicle.state.y - layout.lane_center(lane))
        < 0.5 * layout.lane_width + 0.5 * vehicle.geometry.width + 0.05
    )


def identify_neighbors(
    ego,
    vehicles: Sequence,
    layout: RoadLayout,
    target_lane: int,
    include_target: bool = True,
) -> NeighborTopology:
    """Pick the leading, target-leading and target-rear vehicles for an ego.

    Selection is by lane occupancy (body band overlapping the lane band), so
    an encroaching mid-lane-change vehicle is seen by followers in both lanes.
    Candidates beyond the perception range are ignored. A vehicle at exactly
    the ego's longitudinal position counts as being behind (so a side-by-side
    vehicle in the target lane shows up as target-rear with a negative gap
    and blocks the lane change). Ties in distance break towards the lower
    vehicle id so the result is deterministic.
    """
    leading = None
    leading_dx = math.inf
    t_lead = None
    t_lead_dx = math.inf
    t_rear = None
    t_rear_dx = math.inf
    for other in vehicles:
        if other.vehicle_id == ego.vehicle_id:
            continue
        dx = other.x - ego.x
        if abs(dx) > layout.perception_range:
            continue
        if dx > 0.0 and occupies_lane(other, ego.lane, layout):
            if dx < leading_dx or (dx == leading_dx and other.vehicle_id < leading.vehicle_id):
                leading, leading_dx = other, dx
        if include_target and occupies_lane(other, target_lane, layout):
            if dx > 0.0:
                if dx < t_lead_dx or (dx == t_lead_dx and other.vehicle_id < t_lead.vehicle_id):
                    t_lead, t_lead_dx = other, dx
            else:
                if -dx < t_rear_dx or (-dx == t_rear_dx and other.vehicle_id < t_rear.vehicle_id):
                    t_rear, t_rear_dx = other, -dx
    return NeighborTopology(
        leading=leading,
        target_leading=t_lead,
        target_rear=t_rear,
        gap_leading=longitudinal_gap(ego, leading) if leading is not None else math.inf,
        gap_target_leading=longitudinal_gap(ego, t_lead) if t_lead is not None else math.inf,
        gap_target_rear=longitudinal_gap(t_rear, ego) if t_rear is not None else math.inf,
    )
