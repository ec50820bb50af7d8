#!/usr/bin/env python3
"""End-to-end demo: synthetic cohort -> models -> DQN training -> report.

Runs the whole pipeline at desk scale (a few minutes) into a single output
directory and prints where each artifact landed plus a short summary of the
training run.  Increase --rounds for a longer, more interesting run.

Usage:
    python scripts/run_demo_pipeline.py --out demo_out [--rounds 5000] [--seed 0]
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))

from ovcsim.cli import main as ovcsim  # noqa: E402


def run(argv: list[str]) -> None:
    print(f"$ ovcsim {' '.join(argv)}")
    code = ovcsim(argv)
    if code != 0:
        raise SystemExit(f"step failed with exit code {code}")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="demo_out", help="output directory")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--n-patients", type=int, default=500)
    parser.add_argument("--rounds", type=int, default=5000)
    args = parser.parse_args()

    out = Path(args.out)
    raw, tidy, models = out / "raw", out / "tidy", out / "models"
    run_dir, report_dir = out / "run", out / "report"
    seed = str(args.seed)

    run(["synth", "--seed", seed, "--n-patients", str(args.n_patients),
         "--out", str(raw), "--force"])
    run(["ingest", "--clinical", str(raw / "clinical.csv"),
         "--lines", str(raw / "drug_lines.csv"), "--out", str(tidy), "--force"])
    run(["fit", "--periods", str(tidy / "periods.csv"),
         "--cohort", str(tidy / "cohort.csv"), "--out", str(models), "--force"])
    run(["train", "--agent", "dqn", "--rounds", str(args.rounds), "--seed", seed,
         "--periods", str(tidy / "periods.csv"),
         "--demographics", str(tidy / "demographics.json"),
         "--death-model", str(models / "death_model.json"),
         "--recurrence-model", str(models / "recurrence_model.json"),
         "--hidden-width", "64", "--hidden-layers", "2", "--batch-size", "32",
         "--horizon-cap", "60", "--out", str(run_dir), "--force"])
    run(["evaluate", "--checkpoint", str(run_dir / "checkpoint_final.json"),
         "--n-episodes", "500", "--seed", seed,
         "--periods", str(tidy / "periods.csv"),
         "--demographics", str(tidy / "demographics.json"),
         "--death-model", str(models / "death_model.json"),
         "--recurrence-model", str(models / "recurrence_model.json"),
         "--horizon-cap", "60", "--out", str(out / "eval"), "--force"])
    run(["report", "--run", str(run_dir), "--out", str(report_dir), "--force"])

    comparison = json.loads((report_dir / "comparison.json").read_text())[0]
    greedy = json.loads((out / "eval" / "survival_sample.json").read_text())["values"]
    print()
    print(f"artifacts under {out}/: raw, tidy, models, run, eval, report")
    print(
        f"training mean survival: {comparison['mean_a']:.1f} months "
        f"({comparison['pair'][0]}) -> {comparison['mean_b']:.1f} months "
        f"({comparison['pair'][1]})"
    )
    if "p_two_sided" in comparison:
        print(f"welch test: t={comparison['t']:.2f}, p={comparison['p_two_sided']:.4f}")
    print(f"greedy evaluation mean survival: {sum(greedy) / len(greedy):.1f} months "
          f"over {len(greedy)} episodes")


if __name__ == "__main__":
    main()
