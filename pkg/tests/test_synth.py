"""Synthetic cohort generator tests."""

import json
import math

import pytest

from ovcsim.cli import default_standardization_path
from ovcsim.pipeline import (
    build_treatment_periods,
    filter_cohort,
    load_standardization_table,
    standardize_lines,
)
from ovcsim.synth import (
    BASELINE_MONTHLY_RATE,
    TRUE_COMBINATION_BETAS,
    generate_cohort,
    write_cohort,
)


class TestGenerateCohort:
    def test_deterministic_per_seed(self):
        a = generate_cohort(5, 200)
        b = generate_cohort(5, 200)
        c = generate_cohort(6, 200)
        assert a.clinical == b.clinical and a.lines == b.lines
        assert a.clinical != c.clinical

    def test_every_patient_has_lines_spanning_survival(self):
        cohort = generate_cohort(1, 300)
        by_patient = {}
        for line in cohort.lines:
            by_patient.setdefault(line.patient_id, []).append(line)
        for rec in cohort.clinical:
            lines = sorted(by_patient[rec.patient_id], key=lambda l: l.start_day)
            assert lines[0].start_day == 0
            assert lines[-1].end_day == rec.overall_survival_days
            for line in lines:
                assert line.end_day <= rec.overall_survival_days

    def test_raw_spellings_standardize_cleanly(self):
        cohort = generate_cohort(2, 300)
        table = load_standardization_table(default_standardization_path())
        kept, dropped = standardize_lines(cohort.lines, table)
        assert dropped == 0
        canonical = set(TRUE_COMBINATION_BETAS)
        for line in kept:
            assert "+".join(sorted(line.drug_names_raw)) in canonical

    def test_gap_patients_produce_line_changes(self):
        cohort = generate_cohort(3, 500)
        table = load_standardization_table(default_standardization_path())
        lines, _ = standardize_lines(cohort.lines, table)
        clinical, lines, _ = filter_cohort(cohort.clinical, lines)
        periods = build_treatment_periods(clinical, lines)
        assert any(p.line_ended_this_period and not p.death_this_period for p in periods)
        assert any(p.combination.is_none for p in periods)

    def test_arm_survival_ordering(self):
        # higher log hazard ratio => shorter mean survival; with 3000
        # patients the three arms separate cleanly
        cohort = generate_cohort(4, 3000)
        table = load_standardization_table(default_standardization_path())
        lines, _ = standardize_lines(cohort.lines, table)
        arm_by_pid = {
            line.patient_id: "+".join(sorted(line.drug_names_raw)) for line in lines
        }
        totals: dict[str, list[int]] = {}
        for rec in cohort.clinical:
            totals.setdefault(arm_by_pid[rec.patient_id], []).append(
                rec.overall_survival_days
            )
        means = {arm: sum(v) / len(v) for arm, v in totals.items()}
        ordered = sorted(TRUE_COMBINATION_BETAS, key=TRUE_COMBINATION_BETAS.get)
        assert means[ordered[0]] > means[ordered[1]] > means[ordered[2]]
        # the reference arm's mean matches 1/rate within sampling noise
        expected_days = 30.0 / BASELINE_MONTHLY_RATE
        assert means[ordered[0]] == pytest.approx(expected_days, rel=0.15)

    def test_living_fraction(self):
        cohort = generate_cohort(7, 4000, living_fraction=0.1)
        living = sum(1 for r in cohort.clinical if r.vital_status == "living")
        assert living / 4000 == pytest.approx(0.1, abs=0.02)

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            generate_cohort(0, 0)


class TestWriteCohort:
    def test_files_and_truth(self, tmp_path):
        cohort = generate_cohort(8, 50)
        paths = write_cohort(cohort, tmp_path)
        assert all(p.exists() for p in paths.values())
        truth = json.loads(paths["ground_truth"].read_text())
        assert truth["combination_betas"] == TRUE_COMBINATION_BETAS
        assert truth["baseline_monthly_rate"] == BASELINE_MONTHLY_RATE
        header = paths["drug_lines"].read_text().splitlines()[0]
        assert header == "patient_id,drug_names,start_day,end_day"
