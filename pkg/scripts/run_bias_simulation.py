#!/usr/bin/env python3
"""Run a registered bias scenario end to end and write the comparative audit.

Example:
    python scripts/run_bias_simulation.py --scenario age-bias-v1 --seeds 5 \
        --out-dir out/age-bias
"""

import argparse
import json
from pathlib import Path

from fairaudit.report import simulate_markdown
from fairaudit.simulate import TrainSettings, run_scenario
from fairaudit.toynet import SCENARIOS, scenario_config


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--scenario", default="age-bias-v1",
                        help=f"registered name {sorted(SCENARIOS)} or a JSON config path")
    parser.add_argument("--seeds", type=int, default=5)
    parser.add_argument("--epochs", type=int, default=12)
    parser.add_argument("--learning-rate", type=float, default=0.05)
    parser.add_argument("--hidden", type=int, default=8)
    parser.add_argument("--adversary-lambda", type=float, default=None)
    parser.add_argument("--out-dir", default="out/simulation")
    args = parser.parse_args()

    config = scenario_config(args.scenario)
    settings = TrainSettings(epochs=args.epochs, learning_rate=args.learning_rate,
                             hidden=args.hidden)
    result = run_scenario(config, seeds=list(range(args.seeds)), settings=settings,
                          adversary_lambda=args.adversary_lambda)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "simulate.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    (out / "simulate.md").write_text(simulate_markdown(result))
    print((out / "simulate.md").read_text())


if __name__ == "__main__":
    main()
