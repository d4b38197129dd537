#!/usr/bin/env python3
"""Shielded safety sweep: both densities, adversarial policies.

Reproduces the headline safety numbers (zero crashes, minimum time headway
above the bound) and writes the per-epoch headway series for plotting.

    python3 scripts/safety_sweep.py --episodes 50 --out-dir results/
"""

import argparse
from pathlib import Path

from mergeshield.config import ScenarioConfig
from mergeshield.harness import run_batch, write_headway_series, write_metrics

SEEDS = [11, 22, 33]


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--episodes", type=int, default=50, help="episodes per seed")
    parser.add_argument("--out-dir", default="results")
    args = parser.parse_args()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    scenario = ScenarioConfig()
    for density in ("light", "moderate"):
        for policy in ("random", "aggressive_merger"):
            report = run_batch(
                scenario,
                policy,
                args.episodes,
                SEEDS,
                density=density,
                shield_enabled=True,
            )
            tag = f"{density}-{policy}"
            write_metrics(out / f"metrics-{tag}.csv", report)
            write_headway_series(out / f"headway-{tag}.csv", report)
            print(
                f"{tag}: {report.episodes} episodes, crashes={report.crash_count}, "
                f"min headway={report.min_headway:.3f} s, "
                f"avg speed={report.average_speed:.2f} m/s, "
                f"merges={report.completed_merges}, failed={report.failed_merges}, "
                f"intervention rate={report.intervention_rate:.3f}"
            )


if __name__ == "__main__":
    main()
