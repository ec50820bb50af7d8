"""Synthetic cohort generator with a known ground-truth hazard model.

Survival times are drawn from a proportional-hazards model whose only real
effect is the assigned drug combination, so models fitted downstream can be
checked against the generating coefficients.  Ground truth is written
alongside the CSVs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .pipeline import ClinicalRecord, DrugLineRecord, write_clinical_csv

# per-combination log hazard ratios; the first entry is the reference arm
TRUE_COMBINATION_BETAS: dict[str, float] = {
    "carboplatin+paclitaxel": 0.0,
    "gemcitabine+tamoxifen": 0.5,
    "topotecan": 1.0,
}
BASELINE_MONTHLY_RATE = 0.05
MAX_SURVIVAL_DAYS = 7200

# raw spellings per canonical drug, to exercise standardization
_RAW_SPELLINGS = {
    "carboplatin": ["carboplatin", "Paraplatin", "CARBOplatin"],
    "paclitaxel": ["paclitaxel", "Taxol", " Paclitaxel "],
    "gemcitabine": ["gemcitabine", "Gemzar"],
    "tamoxifen": ["tamoxifen", "Nolvadex"],
    "topotecan": ["topotecan", "Hycamtin"],
}

_RACES = [("white", 0.7), ("black or african american", 0.3)]
_STAGES = [("IIIC", 0.6), ("IV", 0.4)]
_GRADES = [("G2", 0.5), ("G3", 0.5)]


@dataclass
class SyntheticCohort:
    clinical: list[ClinicalRecord]
    lines: list[DrugLineRecord]
    truth: dict = field(default_factory=dict)


def generate_cohort(
    seed: int,
    n_patients: int,
    living_fraction: float = 0.03,
    gap_fraction: float = 0.4,
) -> SyntheticCohort:
    """Sample a cohort of n_patients with treatment-dependent survival.

    Each patient is assigned one drug combination; time to death is
    exponential with rate BASELINE_MONTHLY_RATE * exp(beta[combination])
    regardless of treatment gaps.  A fraction of long survivors get a
    window-aligned mid-course treatment gap (so the recurrence model has
    line-change events to fit), and a small fraction is marked living to
    exercise cohort filtering.
    """
    if n_patients < 1:
        raise ValueError("n_patients must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xC0)))
    combos = list(TRUE_COMBINATION_BETAS)

    clinical: list[ClinicalRecord] = []
    lines: list[DrugLineRecord] = []
    for i in range(n_patients):
        combo = combos[rng.integers(0, len(combos))]
        rate = BASELINE_MONTHLY_RATE * math.exp(TRUE_COMBINATION_BETAS[combo])
        months = rng.exponential(1.0 / rate)
        os_days = int(min(MAX_SURVIVAL_DAYS, max(1, round(months * 30.0))))
        living = rng.random() < living_fraction
        pid = f"SYN-{i:05d}"
        clinical.append(
            ClinicalRecord(
                patient_id=pid,
                age_at_start=int(rng.integers(45, 76)),
                race=_draw(rng, _RACES),
                tumor_stage=_draw(rng, _STAGES),
                tumor_grade=_draw(rng, _GRADES),
                overall_survival_days=os_days,
                vital_status="living" if living else "deceased",
            )
        )
        raw_names = tuple(
            _RAW_SPELLINGS[drug][rng.integers(0, len(_RAW_SPELLINGS[drug]))]
            for drug in combo.split("+")
        )
        n_windows = max(1, math.ceil(os_days / 30))
        if n_windows >= 5 and rng.random() < gap_fraction:
            # treat / gap / treat, split on 30-day window boundaries so the
            # gap yields at least one no-treatment period
            a = max(2, math.ceil(0.4 * n_windows))
            b = min(n_windows - 1, a + max(1, int(0.2 * n_windows)))
            lines.append(DrugLineRecord(pid, raw_names, 0, a * 30))
            lines.append(DrugLineRecord(pid, raw_names, b * 30, os_days))
        else:
            lines.append(DrugLineRecord(pid, raw_names, 0, os_days))

    truth = {
        "baseline_monthly_rate": BASELINE_MONTHLY_RATE,
        "combination_betas": dict(TRUE_COMBINATION_BETAS),
        "other_coefficients": 0.0,
        "note": "demographics are sampled independently of survival",
    }
    return SyntheticCohort(clinical, lines, truth)


def _draw(rng: np.random.Generator, table: list[tuple[str, float]]) -> str:
    cats = [c for c, _ in table]
    probs = np.array([p for _, p in table])
    return cats[rng.choice(len(cats), p=probs / probs.sum())]


def write_cohort(cohort: SyntheticCohort, out_dir: str | Path) -> dict[str, Path]:
    """Write clinical.csv, drug_lines.csv, and ground_truth.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    clinical_path = out / "clinical.csv"
    lines_path = out / "drug_lines.csv"
    truth_path = out / "ground_truth.json"

    write_clinical_csv(cohort.clinical, clinical_path)
    rows = ["patient_id,drug_names,start_day,end_day"]
    for line in cohort.lines:
        rows.append(f"{line.patient_id},{';'.join(line.drug_names_raw)},{line.start_day},{line.end_day}")
    lines_path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    truth_path.write_text(json.dumps(cohort.truth, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return {"clinical": clinical_path, "drug_lines": lines_path, "ground_truth": truth_path}
