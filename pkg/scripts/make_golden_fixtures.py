#!/usr/bin/env python3
"""Regenerate the committed golden fixture run and its expected report.

Builds a small deterministic pipeline (synth -> ingest -> fit -> train ->
report) in a scratch directory and copies the training-run files into
tests/data/golden_run/ and the report outputs into tests/data/golden_report/.
The acceptance suite re-runs `ovcsim report` on golden_run and requires
byte-identical outputs, so only regenerate these fixtures deliberately.
"""

from __future__ import annotations

import shutil
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))

from ovcsim.cli import main  # noqa: E402

SEED = 7


def run(argv: list[str]) -> None:
    code = main(argv)
    if code != 0:
        raise SystemExit(f"step failed ({code}): {' '.join(argv)}")


def build(scratch: Path) -> tuple[Path, Path]:
    raw, tidy, models = scratch / "raw", scratch / "tidy", scratch / "models"
    run_dir, report_dir = scratch / "run", scratch / "report"
    run(["synth", "--seed", str(SEED), "--n-patients", "150", "--out", str(raw)])
    run(
        [
            "ingest",
            "--clinical", str(raw / "clinical.csv"),
            "--lines", str(raw / "drug_lines.csv"),
            "--out", str(tidy),
        ]
    )
    run(
        [
            "fit",
            "--periods", str(tidy / "periods.csv"),
            "--cohort", str(tidy / "cohort.csv"),
            "--out", str(models),
        ]
    )
    run(
        [
            "train",
            "--agent", "random",
            "--rounds", "50",
            "--seed", str(SEED),
            "--periods", str(tidy / "periods.csv"),
            "--demographics", str(tidy / "demographics.json"),
            "--death-model", str(models / "death_model.json"),
            "--recurrence-model", str(models / "recurrence_model.json"),
            "--out", str(run_dir),
        ]
    )
    run(["report", "--run", str(run_dir), "--out", str(report_dir)])
    return run_dir, report_dir


def main_() -> None:
    golden_run = REPO / "tests" / "data" / "golden_run"
    golden_report = REPO / "tests" / "data" / "golden_report"
    with tempfile.TemporaryDirectory() as scratch:
        run_dir, report_dir = build(Path(scratch))
        for target in (golden_run, golden_report):
            if target.exists():
                shutil.rmtree(target)
            target.mkdir(parents=True)
        for name in ("metrics.csv", "trajectories.jsonl", "manifest.json"):
            shutil.copy2(run_dir / name, golden_run / name)
        for name in ("comparison.json", "heatmap.csv", "lines.csv"):
            shutil.copy2(report_dir / name, golden_report / name)
    print(f"wrote {golden_run} and {golden_report}")


if __name__ == "__main__":
    main_()
