"""Shared fixtures: frozen small datasets, point-mass demographics, pinned envs."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from ovcsim.cox import CovariateSchema, Feature, SurvivalDataset
from ovcsim.env import ActionSet, PinnedTransitionModel, TreatmentEnv
from ovcsim.pipeline import EmpiricalDemographics

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture
def fixture_clinical_path() -> Path:
    return DATA_DIR / "clinical_small.csv"


@pytest.fixture
def fixture_lines_path() -> Path:
    return DATA_DIR / "drug_lines_small.csv"


# 8-row, 2-covariate survival dataset with tied event times; frozen values.
COX_FIXTURE_X = np.array(
    [
        [0.5, 1.0],
        [-0.2, 0.0],
        [1.3, -0.7],
        [0.0, 0.4],
        [-1.1, 0.9],
        [0.7, -0.3],
        [0.2, 1.5],
        [-0.6, -1.2],
    ]
)
COX_FIXTURE_T = np.array([1, 1, 2, 2, 3, 4, 5, 5])
COX_FIXTURE_E = np.array([True, False, True, True, False, True, True, True])


@pytest.fixture
def cox_fixture() -> SurvivalDataset:
    schema = CovariateSchema((Feature("x0", "numeric"), Feature("x1", "numeric")))
    return SurvivalDataset(COX_FIXTURE_X, COX_FIXTURE_T, COX_FIXTURE_E, schema)


# 6-row, single-covariate companion fixture (one tie, one censored row)
COX_FIXTURE2_X = np.array([[0.0], [1.0], [0.5], [-1.0], [2.0], [0.3]])
COX_FIXTURE2_T = np.array([1, 2, 2, 3, 4, 5])
COX_FIXTURE2_E = np.array([True, True, False, True, True, True])


@pytest.fixture
def point_demographics() -> EmpiricalDemographics:
    return EmpiricalDemographics(
        race=[("white", 1.0)],
        stage=[("IIIC", 1.0)],
        grade=[("G3", 1.0)],
        ages=[60],
    )


def make_pinned_env(
    p_death,
    p_remission=0.0,
    action_labels=("carboplatin", "topotecan"),
    demographics=None,
    horizon_cap=240,
) -> TreatmentEnv:
    if demographics is None:
        demographics = EmpiricalDemographics(
            race=[("white", 1.0)], stage=[("IIIC", 1.0)], grade=[("G3", 1.0)], ages=[60]
        )
    return TreatmentEnv(
        transition_model=PinnedTransitionModel(p_death=p_death, p_remission=p_remission),
        action_set=ActionSet.from_labels(list(action_labels)),
        demographics=demographics,
        horizon_cap=horizon_cap,
    )
