#!/usr/bin/env python3
"""Shield on/off ablation under the aggressive merger.

The off arm is the negative control: with blind cut-ins and no shield the
fleet crashes in most episodes; the on arm must stay crash-free.

    python3 scripts/shield_ablation.py --episodes 50
"""

import argparse

from mergeshield.config import ScenarioConfig
from mergeshield.harness import run_batch

SEEDS = [11, 22, 33]


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--episodes", type=int, default=50, help="episodes per seed")
    parser.add_argument("--density", default="moderate", choices=("light", "moderate"))
    args = parser.parse_args()

    scenario = ScenarioConfig()
    for shield_on in (True, False):
        report = run_batch(
            scenario,
            "aggressive_merger",
            args.episodes,
            SEEDS,
            density=args.density,
            shield_enabled=shield_on,
        )
        crash_share = report.crash_episodes / report.episodes
        print(
            f"shield {'on ' if shield_on else 'off'}: {report.episodes} episodes, "
            f"crashes={report.crash_count} (in {crash_share:.0%} of episodes), "
            f"min headway={report.min_headway:.3f} s, "
            f"avg speed={report.average_speed:.2f} m/s"
        )


if __name__ == "__main__":
    main()
