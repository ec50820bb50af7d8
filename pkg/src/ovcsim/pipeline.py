"""Clinical data ingestion.

Standardizes drug names, applies cohort exclusions, reorganizes drug lines
into 30-day treatment periods, and derives the empirical demographic
distributions used to sample simulated patients.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import pandas as pd

from .errors import EmptyCohort, InconsistentSpan, SchemaViolation, UnknownDrugName

WINDOW_DAYS = 30

CLINICAL_COLUMNS = [
    "patient_id",
    "age_at_start",
    "race",
    "tumor_stage",
    "tumor_grade",
    "overall_survival_days",
    "vital_status",
]
DRUG_LINE_COLUMNS = ["patient_id", "drug_names", "start_day", "end_day"]
PERIOD_COLUMNS = [
    "patient_id",
    "month_index",
    "combination",
    "months_on_current",
    "prior_lines",
    "death_this_period",
    "line_ended_this_period",
]


@dataclass(frozen=True, order=True)
class DrugCombination:
    """A sorted, deduplicated set of canonical generic drug names.

    The empty combination is the distinguished no-active-treatment value and
    renders as the literal ``NONE``.
    """

    drugs: tuple[str, ...]

    @classmethod
    def of(cls, names: Iterable[str]) -> "DrugCombination":
        return cls(tuple(sorted(set(names))))

    @classmethod
    def parse(cls, label: str) -> "DrugCombination":
        label = label.strip()
        if label == "NONE" or not label:
            return NO_TREATMENT
        return cls.of(part.strip() for part in label.split("+") if part.strip())

    @property
    def is_none(self) -> bool:
        return not self.drugs

    def label(self) -> str:
        return "+".join(self.drugs) if self.drugs else "NONE"


NO_TREATMENT = DrugCombination(())


@dataclass(frozen=True)
class ClinicalRecord:
    patient_id: str
    age_at_start: int
    race: str
    tumor_stage: str
    tumor_grade: str
    overall_survival_days: int
    vital_status: str  # "deceased" | "living"


@dataclass(frozen=True)
class DrugLineRecord:
    patient_id: str
    drug_names_raw: tuple[str, ...]
    start_day: int
    end_day: int


@dataclass(frozen=True)
class TreatmentPeriod:
    patient_id: str
    month_index: int
    combination: DrugCombination
    months_on_current: int
    prior_lines: int
    death_this_period: bool
    line_ended_this_period: bool


@dataclass
class EmpiricalDemographics:
    """Frequency tables for categorical attributes plus the raw age sample.

    Tables are stored as sorted (category, frequency) pairs so that sampling
    order is deterministic.
    """

    race: list[tuple[str, float]]
    stage: list[tuple[str, float]]
    grade: list[tuple[str, float]]
    ages: list[int] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "race": dict(self.race),
            "stage": dict(self.stage),
            "grade": dict(self.grade),
            "ages": list(self.ages),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "EmpiricalDemographics":
        return cls(
            race=sorted(d["race"].items()),
            stage=sorted(d["stage"].items()),
            grade=sorted(d["grade"].items()),
            ages=[int(a) for a in d["ages"]],
        )


# ---------------------------------------------------------------------------
# drug name standardization


def load_standardization_table(path: str | Path) -> dict[str, str]:
    """Load the two-column raw<TAB>canonical mapping, keyed lowercase."""
    table: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise SchemaViolation(f"{path}:{lineno}: expected 'raw<TAB>canonical', got {line!r}")
        raw, canonical = parts[0].strip().lower(), parts[1].strip().lower()
        table[raw] = canonical
    return table


def standardize_drug_name(raw: str, table: Mapping[str, str]) -> str:
    """Map a raw drug name to its canonical lowercase generic name.

    Lookup is case-insensitive and whitespace-trimmed.  Names that already
    appear as canonical values pass through unchanged.
    """
    key = raw.strip().lower()
    if not key:
        raise UnknownDrugName("empty drug name")
    if key in table:
        return table[key]
    if key in set(table.values()):
        return key
    raise UnknownDrugName(raw.strip())


def standardize_lines(
    lines: Sequence[DrugLineRecord],
    table: Mapping[str, str],
    strict: bool = False,
) -> tuple[list[DrugLineRecord], int]:
    """Canonicalize drug names in every line.

    Lines containing a name absent from the table are dropped (counted) by
    default, or raise UnknownDrugName in strict mode.
    """
    out: list[DrugLineRecord] = []
    dropped = 0
    for line in lines:
        try:
            canon = tuple(standardize_drug_name(n, table) for n in line.drug_names_raw)
        except UnknownDrugName:
            if strict:
                raise
            dropped += 1
            continue
        out.append(DrugLineRecord(line.patient_id, canon, line.start_day, line.end_day))
    return out, dropped


# ---------------------------------------------------------------------------
# cohort filtering


def filter_cohort(
    clinical: Sequence[ClinicalRecord],
    lines: Sequence[DrugLineRecord],
) -> tuple[list[ClinicalRecord], list[DrugLineRecord], dict[str, int]]:
    """Apply the cohort exclusions and return a per-rule drop report.

    Drops drug lines with no drug names or with equal start/end day, drops
    patients who are still living (no overall-survival endpoint), and drops
    lines belonging to dropped patients.
    """
    report = {
        "living_patients": 0,
        "lines_empty_drugs": 0,
        "lines_zero_duration": 0,
        "lines_dropped_patient": 0,
    }
    kept_clinical = []
    for rec in clinical:
        if rec.vital_status != "deceased":
            report["living_patients"] += 1
        else:
            kept_clinical.append(rec)
    retained_ids = {rec.patient_id for rec in kept_clinical}

    kept_lines = []
    for line in lines:
        if not line.drug_names_raw:
            report["lines_empty_drugs"] += 1
        elif line.start_day == line.end_day:
            report["lines_zero_duration"] += 1
        elif line.patient_id not in retained_ids:
            report["lines_dropped_patient"] += 1
        else:
            kept_lines.append(line)
    return kept_clinical, kept_lines, report


# ---------------------------------------------------------------------------
# 30-day treatment periods


def n_periods_for(survival_days: int) -> int:
    """Number of 30-day windows covering [0, survival_days]; at least one."""
    return max(1, math.ceil(survival_days / WINDOW_DAYS))


def build_treatment_periods(
    clinical: Sequence[ClinicalRecord],
    lines: Sequence[DrugLineRecord],
) -> list[TreatmentPeriod]:
    """Reorganize drug lines into per-patient 30-day treatment periods.

    A line contributes to a window when it overlaps it by at least one day.
    A trailing window shorter than 30 days still counts as one period.
    """
    by_patient: dict[str, list[DrugLineRecord]] = {}
    for line in lines:
        by_patient.setdefault(line.patient_id, []).append(line)

    periods: list[TreatmentPeriod] = []
    for rec in clinical:
        os_days = rec.overall_survival_days
        n = n_periods_for(os_days)
        patient_lines = by_patient.get(rec.patient_id, [])
        for line in patient_lines:
            if line.end_day > os_days + WINDOW_DAYS:
                raise InconsistentSpan(
                    f"patient {rec.patient_id}: line ends day {line.end_day}, "
                    f"survival {os_days} days"
                )

        combos: list[DrugCombination] = []
        for k in range(n):
            w_start, w_end = k * WINDOW_DAYS, (k + 1) * WINDOW_DAYS
            drugs: set[str] = set()
            for line in patient_lines:
                overlap = min(line.end_day, w_end) - max(line.start_day, w_start)
                if overlap >= 1:
                    drugs.update(line.drug_names_raw)
            combos.append(DrugCombination.of(drugs) if drugs else NO_TREATMENT)

        months_on = 0
        prior_lines = 0
        prev: DrugCombination | None = None
        for k, combo in enumerate(combos):
            if combo == prev:
                months_on += 1
            else:
                if prev is not None and not prev.is_none:
                    prior_lines += 1
                months_on = 1
            dead_here = rec.vital_status == "deceased" and k == n - 1
            line_ended = k + 1 < n and combos[k + 1] != combo
            periods.append(
                TreatmentPeriod(
                    patient_id=rec.patient_id,
                    month_index=k,
                    combination=combo,
                    months_on_current=months_on,
                    prior_lines=prior_lines,
                    death_this_period=dead_here,
                    line_ended_this_period=line_ended,
                )
            )
            prev = combo
    return periods


def empirical_distributions(clinical: Sequence[ClinicalRecord]) -> EmpiricalDemographics:
    """Frequency tables over the retained cohort, plus the raw age sample."""
    if not clinical:
        raise EmptyCohort("no patients in cohort")

    def table(values: list[str]) -> list[tuple[str, float]]:
        counts = Counter(values)
        total = sum(counts.values())
        return sorted((cat, cnt / total) for cat, cnt in counts.items())

    return EmpiricalDemographics(
        race=table([r.race for r in clinical]),
        stage=table([r.tumor_stage for r in clinical]),
        grade=table([r.tumor_grade for r in clinical]),
        ages=[r.age_at_start for r in clinical],
    )


# ---------------------------------------------------------------------------
# file I/O


def _require_columns(df: pd.DataFrame, expected: list[str], path: str | Path) -> None:
    missing = [c for c in expected if c not in df.columns]
    if missing:
        raise SchemaViolation(f"{path}: missing column(s) {', '.join(missing)}")


def read_clinical_csv(path: str | Path) -> list[ClinicalRecord]:
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    _require_columns(df, CLINICAL_COLUMNS, path)
    records = []
    for i, row in enumerate(df.itertuples(index=False), start=2):
        try:
            os_days = int(row.overall_survival_days)
            age = int(row.age_at_start)
        except ValueError as exc:
            raise SchemaViolation(f"{path}:{i}: non-integer field ({exc})") from exc
        if os_days < 0:
            raise SchemaViolation(f"{path}:{i}: negative overall_survival_days")
        records.append(
            ClinicalRecord(
                patient_id=row.patient_id,
                age_at_start=age,
                race=row.race,
                tumor_stage=row.tumor_stage,
                tumor_grade=row.tumor_grade,
                overall_survival_days=os_days,
                vital_status=row.vital_status,
            )
        )
    return records


def read_drug_lines_csv(path: str | Path) -> list[DrugLineRecord]:
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    _require_columns(df, DRUG_LINE_COLUMNS, path)
    records = []
    for i, row in enumerate(df.itertuples(index=False), start=2):
        try:
            start, end = int(row.start_day), int(row.end_day)
        except ValueError as exc:
            raise SchemaViolation(f"{path}:{i}: non-integer day ({exc})") from exc
        names = tuple(n.strip() for n in row.drug_names.split(";") if n.strip())
        records.append(DrugLineRecord(row.patient_id, names, start, end))
    return records


def write_periods_csv(periods: Sequence[TreatmentPeriod], path: str | Path) -> None:
    df = pd.DataFrame(
        {
            "patient_id": [p.patient_id for p in periods],
            "month_index": [p.month_index for p in periods],
            "combination": [p.combination.label() for p in periods],
            "months_on_current": [p.months_on_current for p in periods],
            "prior_lines": [p.prior_lines for p in periods],
            "death_this_period": [p.death_this_period for p in periods],
            "line_ended_this_period": [p.line_ended_this_period for p in periods],
        },
        columns=PERIOD_COLUMNS,
    )
    df.to_csv(path, index=False)


def read_periods_csv(path: str | Path) -> list[TreatmentPeriod]:
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    _require_columns(df, PERIOD_COLUMNS, path)
    return [
        TreatmentPeriod(
            patient_id=row.patient_id,
            month_index=int(row.month_index),
            combination=DrugCombination.parse(row.combination),
            months_on_current=int(row.months_on_current),
            prior_lines=int(row.prior_lines),
            death_this_period=row.death_this_period == "True",
            line_ended_this_period=row.line_ended_this_period == "True",
        )
        for row in df.itertuples(index=False)
    ]


def write_clinical_csv(clinical: Sequence[ClinicalRecord], path: str | Path) -> None:
    df = pd.DataFrame(
        {
            "patient_id": [r.patient_id for r in clinical],
            "age_at_start": [r.age_at_start for r in clinical],
            "race": [r.race for r in clinical],
            "tumor_stage": [r.tumor_stage for r in clinical],
            "tumor_grade": [r.tumor_grade for r in clinical],
            "overall_survival_days": [r.overall_survival_days for r in clinical],
            "vital_status": [r.vital_status for r in clinical],
        },
        columns=CLINICAL_COLUMNS,
    )
    df.to_csv(path, index=False)
