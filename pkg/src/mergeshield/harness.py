"""Batch episode runner, metrics aggregation and trace/plot-data export.

Traces are newline-delimited JSON with a schema-versioned header line, so
any safety claim can be re-derived offline. Metrics and headway series are
plain CSV. All outputs are byte-deterministic for identical inputs.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from mergeshield.behavior import make_policy
from mergeshield.config import EpisodeConfig, ScenarioConfig
from mergeshield.env import EpisodeSummary, MergingEnv
from mergeshield.trace import TRACE_FIELDS, TRACE_SCHEMA, TRACE_VERSION, StepTrace


@dataclass
class MetricsReport:
    """Aggregated results of a batch; carries raw sums so that reports from
    batch partitions merge associatively into the one-shot result."""

    episodes: int = 0
    crash_count: int = 0
    crash_episodes: int = 0
    failed_merges: int = 0
    completed_merges: int = 0
    min_headway: float = math.inf
    min_barrier: float = math.inf
    audit_min_margin: float = math.inf
    interventions: int = 0
    lateral_vetoes: int = 0
    slack_events: int = 0
    controlled_substeps: int = 0
    speed_sum: float = 0.0
    speed_samples: int = 0
    # Per-(seed, epoch) episode minima for the headway series.
    episode_headways: list = field(default_factory=list)

    @property
    def mean_crashes_per_episode(self) -> float:
        return self.crash_count / self.episodes if self.episodes else 0.0

    @property
    def average_speed(self) -> float:
        return self.speed_sum / self.speed_samples if self.speed_samples else 0.0

    @property
    def intervention_rate(self) -> float:
        if not self.controlled_substeps:
            return 0.0
        return self.interventions / self.controlled_substeps

    def fold(self, seed: int, epoch: int, summary: EpisodeSummary) -> None:
        self.episodes += 1
        self.crash_count += summary.crash_count
        if summary.crash_count > 0:
            self.crash_episodes += 1
        self.failed_merges += summary.failed_merges
        self.completed_merges += summary.completed_merges
        self.min_headway = min(self.min_headway, summary.min_headway)
        self.min_barrier = min(self.min_barrier, summary.min_barrier)
        self.audit_min_margin = min(self.audit_min_margin, summary.audit_min_margin)
        self.interventions += summary.interventions
        self.lateral_vetoes += summary.vetoes
        self.slack_events += summary.slack_events
        self.controlled_substeps += summary.controlled_substeps
        self.speed_sum += summary.speed_sum
        self.speed_samples += summary.speed_samples
        self.episode_headways.append((seed, epoch, summary.min_headway))

    def merge(self, other: "MetricsReport") -> "MetricsReport":
        out = MetricsReport()
        for report in (self, other):
            out.episodes += report.episodes
            out.crash_count += report.crash_count
            out.crash_episodes += report.crash_episodes
            out.failed_merges += report.failed_merges
            out.completed_merges += report.completed_merges
            out.min_headway = min(out.min_headway, report.min_headway)
            out.min_barrier = min(out.min_barrier, report.min_barrier)
            out.audit_min_margin = min(out.audit_min_margin, report.audit_min_margin)
            out.interventions += report.interventions
            out.lateral_vetoes += report.lateral_vetoes
            out.slack_events += report.slack_events
            out.controlled_substeps += report.controlled_substeps
            out.speed_sum += report.speed_sum
            out.speed_samples += report.speed_samples
            out.episode_headways.extend(report.episode_headways)
        out.episode_headways.sort(key=lambda t: (t[0], t[1]))
        return out

    CSV_COLUMNS = (
        "episodes",
        "crash_count",
        "mean_crashes_per_episode",
        "crash_episodes",
        "average_speed",
        "min_headway",
        "min_barrier",
        "failed_merges",
        "completed_merges",
        "intervention_rate",
        "lateral_vetoes",
        "slack_events",
        "audit_min_margin",
        "controlled_substeps",
    )

    def to_csv(self) -> str:
        values = [repr(getattr(self, name)) for name in self.CSV_COLUMNS]
        return ",".join(self.CSV_COLUMNS) + "\n" + ",".join(values) + "\n"


def run_episode(
    env: MergingEnv,
    policy_name: str,
    episode: EpisodeConfig,
) -> EpisodeSummary:
    """Run one full episode; policies are seeded per vehicle from the
    episode's (seed, index) so the whole run is reproducible."""
    observations = env.reset(episode)
    acting = env.active_vehicles()
    policies = {
        v.vehicle_id: make_policy(
            policy_name,
            env.scenario,
            np.random.default_rng([episode.seed, episode.episode_index, v.vehicle_id]),
        )
        for v in acting
    }
    obs_map = {v.vehicle_id: o for v, o in zip(acting, observations)}
    while not env.done:
        acting = env.active_vehicles()
        if not acting:
            break
        actions = [policies[v.vehicle_id].act(obs_map[v.vehicle_id]) for v in acting]
        observations, _, _, info = env.step(actions)
        obs_map = {vid: o for vid, o in zip(info["acted_ids"], observations)}
    return env.summary


def run_batch(
    scenario: ScenarioConfig,
    policy_name: str,
    episodes: int,
    seeds: Sequence[int],
    *,
    density: str = "moderate",
    shield_enabled: bool = True,
    trace_sink=None,
    max_steps_after_merge: int = 100,
) -> MetricsReport:
    """Run `episodes` episodes under every seed and aggregate the metrics.

    Deterministic: the loop order (seed-major, then episode index) fixes the
    aggregation order, and every episode is fully determined by its
    (seed, index, scenario, policy) tuple.
    """
    if episodes < 1:
        raise ValueError("episodes must be at least 1")
    if not seeds:
        raise ValueError("at least one seed is required")
    report = MetricsReport()
    env = MergingEnv(scenario, shield_enabled=shield_enabled, trace_sink=trace_sink)
    for seed in seeds:
        for epoch in range(episodes):
            episode = EpisodeConfig(
                density=density,
                seed=seed,
                episode_index=epoch,
                max_steps_after_merge=max_steps_after_merge,
            )
            summary = run_episode(env, policy_name, episode)
            report.fold(seed, epoch, summary)
    return report


# --------------------------------------------------------------------- traces


def _trace_to_json(trace: StepTrace) -> str:
    record = asdict(trace)
    return json.dumps(record, separators=(",", ":"), sort_keys=False)


class TraceWriter:
    """Streams StepTrace records to a newline-delimited JSON file."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._fh = self.path.open("w")
        header = {
            "schema": TRACE_SCHEMA,
            "version": TRACE_VERSION,
            "fields": list(TRACE_FIELDS),
        }
        self._fh.write(json.dumps(header, separators=(",", ":")) + "\n")
        self.count = 0

    def __call__(self, trace: StepTrace) -> None:
        self._fh.write(_trace_to_json(trace) + "\n")
        self.count += 1

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "TraceWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def export_traces(path: str | Path, traces: Iterable[StepTrace]) -> int:
    """Write records to path; returns the record count."""
    with TraceWriter(path) as writer:
        for trace in traces:
            writer(trace)
        return writer.count


def read_traces(path: str | Path) -> tuple[dict, list[StepTrace]]:
    """Read a trace file back; lossless inverse of the writer."""
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ValueError(f"trace file {path} is empty")
    header = json.loads(lines[0])
    if header.get("schema") != TRACE_SCHEMA:
        raise ValueError(f"unrecognised trace schema in {path}: {header.get('schema')!r}")
    records = []
    for line in lines[1:]:
        data = json.loads(line)
        records.append(StepTrace(**data))
    return header, records


# --------------------------------------------------------------- headway series


def emit_headway_series(report: MetricsReport) -> str:
    """CSV of per-epoch minimum headway with the min/max envelope over seeds.

    Columns: epoch, min_headway (worst over seeds), lo, hi. With one seed
    the envelope collapses onto the point value. Infinite minima (an epoch
    with no leader at any substep) are emitted as empty cells.
    """
    by_epoch: dict[int, list[float]] = {}
    for seed, epoch, value in report.episode_headways:
        by_epoch.setdefault(epoch, []).append(value)

    def cell(value: float) -> str:
        return repr(value) if math.isfinite(value) else ""

    lines = ["epoch,min_headway,lo,hi"]
    for epoch in sorted(by_epoch):
        values = by_epoch[epoch]
        lines.append(
            f"{epoch},{cell(min(values))},{cell(min(values))},{cell(max(values))}"
        )
    return "\n".join(lines) + "\n"


def write_headway_series(path: str | Path, report: MetricsReport) -> None:
    Path(path).write_text(emit_headway_series(report))


def write_metrics(path: str | Path, report: MetricsReport) -> None:
    Path(path).write_text(report.to_csv())
