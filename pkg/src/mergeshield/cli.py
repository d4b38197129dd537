"""Command-line batch runner.

Example:

    mergeshield --policy aggressive_merger --density moderate \
        --episodes 20 --seeds 11,22,33 --shield on \
        --metrics-out metrics.csv --headway-out headway.csv \
        --trace-out traces.ndjson

Outputs are byte-deterministic for identical arguments.
"""

from __future__ import annotations

import argparse
import sys

from mergeshield.behavior import scripted_policies
from mergeshield.config import DENSITY_BANDS, load_scenario
from mergeshield.harness import (
    TraceWriter,
    run_batch,
    write_headway_series,
    write_metrics,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mergeshield",
        description="Run batches of shielded on-ramp merging episodes.",
    )
    parser.add_argument("--scenario", default=None, help="scenario YAML file (defaults built in)")
    parser.add_argument(
        "--policy",
        default=None,
        choices=sorted(scripted_policies()),
        help="behavioural policy (defaults to the scenario's policy)",
    )
    parser.add_argument("--density", default="moderate", choices=sorted(DENSITY_BANDS))
    parser.add_argument("--episodes", type=int, default=10, help="episodes per seed")
    parser.add_argument(
        "--seeds", default="0", help="comma-separated seed list, e.g. 11,22,33"
    )
    parser.add_argument("--shield", default="on", choices=("on", "off"))
    parser.add_argument("--trace-out", default=None, help="write step traces (ndjson)")
    parser.add_argument("--metrics-out", default=None, help="write metrics CSV")
    parser.add_argument("--headway-out", default=None, help="write headway series CSV")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    scenario = load_scenario(args.scenario)
    policy = args.policy or scenario.policy
    seeds = [int(s) for s in args.seeds.split(",") if s.strip() != ""]
    if not seeds:
        print("error: --seeds must name at least one seed", file=sys.stderr)
        return 2

    writer = TraceWriter(args.trace_out) if args.trace_out else None
    try:
        report = run_batch(
            scenario,
            policy,
            args.episodes,
            seeds,
            density=args.density,
            shield_enabled=args.shield == "on",
            trace_sink=writer,
        )
    finally:
        if writer is not None:
            writer.close()

    if args.metrics_out:
        write_metrics(args.metrics_out, report)
    if args.headway_out:
        write_headway_series(args.headway_out, report)
    sys.stdout.write(report.to_csv())
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
