"""Penalized Cox proportional-hazards fitting.

Two regressions share this machinery: the terminal death-event model on the
months-since-treatment-start timescale, and the gap-time recurrence model
whose clock resets at each treatment-line change.  Fitting is Newton-Raphson
on the ridge-penalized log partial likelihood with the Efron correction for
tied event times; the baseline cumulative hazard comes from the Breslow
estimator evaluated at the fitted coefficients.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DegenerateData,
    IncompatibleCheckpoint,
    NonConvergence,
    SingularHessian,
    UnknownCategory,
    ZeroSurvival,
)
from .pipeline import ClinicalRecord, TreatmentPeriod

MODEL_FORMAT_VERSION = 1

HEALTH_NEEDS_TREATMENT = "NEEDS_TREATMENT"
HEALTH_REMISSION = "REMISSION"


@dataclass(frozen=True)
class Feature:
    """One covariate descriptor: numeric pass-through or one-hot category.

    For categorical features the first vocabulary entry is the reference
    level and encodes to all zeros.
    """

    name: str
    kind: str  # "numeric" | "category"
    categories: tuple[str, ...] = ()

    def width(self) -> int:
        return 1 if self.kind == "numeric" else len(self.categories) - 1


@dataclass(frozen=True)
class CovariateSchema:
    features: tuple[Feature, ...]

    def dimension(self) -> int:
        return sum(f.width() for f in self.features)

    def column_names(self) -> list[str]:
        names = []
        for f in self.features:
            if f.kind == "numeric":
                names.append(f.name)
            else:
                names.extend(f"{f.name}={c}" for c in f.categories[1:])
        return names

    def encode(self, values: Mapping[str, object]) -> np.ndarray:
        """Encode a feature mapping to a fixed-dimension real vector."""
        out = np.zeros(self.dimension())
        pos = 0
        for f in self.features:
            if f.kind == "numeric":
                out[pos] = float(values[f.name])  # type: ignore[arg-type]
                pos += 1
            else:
                v = str(values[f.name])
                if v not in f.categories:
                    raise UnknownCategory(f"{f.name}={v!r}")
                idx = f.categories.index(v)
                if idx > 0:
                    out[pos + idx - 1] = 1.0
                pos += f.width()
        return out

    def as_dict(self) -> list[dict]:
        return [
            {"name": f.name, "kind": f.kind, "categories": list(f.categories)}
            for f in self.features
        ]

    @classmethod
    def from_dict(cls, items: Iterable[Mapping]) -> "CovariateSchema":
        return cls(
            tuple(
                Feature(d["name"], d["kind"], tuple(d.get("categories", ())))
                for d in items
            )
        )


@dataclass
class SurvivalDataset:
    """Rows of (covariate vector, integer month duration >= 1, event flag)."""

    X: np.ndarray  # (n, p)
    durations: np.ndarray  # (n,) int
    events: np.ndarray  # (n,) bool
    schema: CovariateSchema | None = None

    def __post_init__(self) -> None:
        self.X = np.asarray(self.X, dtype=float)
        self.durations = np.asarray(self.durations, dtype=int)
        self.events = np.asarray(self.events, dtype=bool)
        if np.any(self.durations < 1):
            raise ValueError("durations must be >= 1")


@dataclass
class CoxModel:
    beta: np.ndarray
    baseline_months: np.ndarray  # integer grid 0..T
    cumulative_hazard: np.ndarray  # Lambda0 on that grid; Lambda0(0) == 0
    schema: CovariateSchema | None
    timescale: str  # "since_treatment_start" | "gap_since_last_event"
    penalty: float
    diagnostics: dict = field(default_factory=dict)

    def baseline_cumhaz(self, t: float) -> float:
        """Step-function lookup, held constant beyond the last grid point."""
        if t < 0:
            raise ValueError("t must be >= 0")
        idx = min(int(t), len(self.baseline_months) - 1)
        return float(self.cumulative_hazard[idx])

    def survival_at(self, x: np.ndarray, t: float) -> float:
        """S(t|x) = exp(-Lambda0(t) * exp(beta.x))."""
        risk = float(np.exp(self.beta @ np.asarray(x, dtype=float)))
        return float(np.exp(-self.baseline_cumhaz(t) * risk))

    def conditional_event_prob(self, x: np.ndarray, t: int) -> float:
        """P(event during month t | no event through month t-1)."""
        if t < 1:
            raise ValueError("t must be >= 1")
        s_prev = self.survival_at(x, t - 1)
        if s_prev == 0.0:
            raise ZeroSurvival(f"S({t - 1}|x) underflowed to 0")
        s_now = self.survival_at(x, t)
        if s_now == s_prev:
            return 0.0
        return float(min(1.0, max(0.0, 1.0 - s_now / s_prev)))

    def to_json(self, path: str | Path) -> None:
        doc = {
            "version": MODEL_FORMAT_VERSION,
            "timescale": self.timescale,
            "penalty": self.penalty,
            "schema": self.schema.as_dict() if self.schema else None,
            "beta": self.beta.tolist(),
            "baseline_grid": self.baseline_months.tolist(),
            "cumulative_hazard": self.cumulative_hazard.tolist(),
            "diagnostics": self.diagnostics,
        }
        Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def from_json(cls, path: str | Path) -> "CoxModel":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        if doc.get("version") != MODEL_FORMAT_VERSION:
            raise IncompatibleCheckpoint(f"{path}: unsupported model version {doc.get('version')}")
        return cls(
            beta=np.array(doc["beta"], dtype=float),
            baseline_months=np.array(doc["baseline_grid"], dtype=int),
            cumulative_hazard=np.array(doc["cumulative_hazard"], dtype=float),
            schema=CovariateSchema.from_dict(doc["schema"]) if doc["schema"] else None,
            timescale=doc["timescale"],
            penalty=float(doc["penalty"]),
            diagnostics=doc.get("diagnostics", {}),
        )


# ---------------------------------------------------------------------------
# partial likelihood


def penalized_loglik_grad_hess(
    X: np.ndarray,
    durations: np.ndarray,
    events: np.ndarray,
    beta: np.ndarray,
    penalty: float,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Efron-corrected log partial likelihood, gradient, and Hessian.

    Returns (loglik - penalty/2 * ||beta||^2, gradient, Hessian) of the
    penalized objective.
    """
    n, p = X.shape
    eta = np.clip(X @ beta, -500.0, 500.0)
    w = np.exp(eta)
    wX = w[:, None] * X

    ll = 0.0
    grad = np.zeros(p)
    hess = np.zeros((p, p))
    for tau in np.unique(durations[events]):
        at_risk = durations >= tau
        dead = (durations == tau) & events
        d = int(dead.sum())

        s0 = float(w[at_risk].sum())
        s1 = wX[at_risk].sum(axis=0)
        s2 = X[at_risk].T @ wX[at_risk]
        d0 = float(w[dead].sum())
        d1 = wX[dead].sum(axis=0)
        d2 = X[dead].T @ wX[dead]

        ll += float(eta[dead].sum())
        grad += X[dead].sum(axis=0)
        for ell in range(d):
            frac = ell / d
            phi = s0 - frac * d0
            z1 = s1 - frac * d1
            z2 = s2 - frac * d2
            ll -= np.log(phi)
            grad -= z1 / phi
            hess -= z2 / phi - np.outer(z1, z1) / phi**2

    ll -= 0.5 * penalty * float(beta @ beta)
    grad -= penalty * beta
    hess -= penalty * np.eye(p)
    return ll, grad, hess


def fit_cox(
    data: SurvivalDataset,
    penalty: float = 0.1,
    timescale: str = "since_treatment_start",
    max_iter: int = 100,
    grad_tol: float = 1e-7,
    ll_tol: float = 1e-9,
) -> CoxModel:
    """Maximize the ridge-penalized partial likelihood by Newton-Raphson.

    Uses step-halving when a full Newton step decreases the objective.
    Convergence: max |gradient| < grad_tol or objective change < ll_tol.
    """
    if penalty < 0:
        raise ValueError("penalty must be >= 0")
    if not data.events.any():
        raise DegenerateData("no event rows")

    X, t, e = data.X, data.durations, data.events
    p = X.shape[1]
    beta = np.zeros(p)
    ll, grad, hess = penalized_loglik_grad_hess(X, t, e, beta, penalty)

    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        try:
            delta = np.linalg.solve(-hess, grad)
        except np.linalg.LinAlgError as exc:
            raise SingularHessian(str(exc)) from exc
        if not np.all(np.isfinite(delta)):
            raise SingularHessian("non-finite Newton step")

        step = 1.0
        for _ in range(40):
            candidate = beta + step * delta
            new_ll, new_grad, new_hess = penalized_loglik_grad_hess(X, t, e, candidate, penalty)
            if new_ll >= ll or not np.isfinite(new_ll):
                break
            step *= 0.5
        delta_ll = new_ll - ll
        beta, ll, grad, hess = candidate, new_ll, new_grad, new_hess
        if np.max(np.abs(grad)) < grad_tol or abs(delta_ll) < ll_tol:
            converged = True
            break
    if not converged:
        raise NonConvergence(f"no convergence in {max_iter} iterations")

    months, cumhaz = breslow_baseline(X, t, e, beta)
    return CoxModel(
        beta=beta,
        baseline_months=months,
        cumulative_hazard=cumhaz,
        schema=data.schema,
        timescale=timescale,
        penalty=penalty,
        diagnostics={
            "log_partial_likelihood": float(ll),
            "iterations": it,
            "max_gradient_norm": float(np.max(np.abs(grad))),
        },
    )


def breslow_baseline(
    X: np.ndarray,
    durations: np.ndarray,
    events: np.ndarray,
    beta: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Breslow cumulative baseline hazard on the integer month grid."""
    w = np.exp(np.clip(X @ beta, -500.0, 500.0))
    t_max = int(durations.max())
    increments = np.zeros(t_max + 1)
    for tau in np.unique(durations[events]):
        at_risk = durations >= tau
        d = int(((durations == tau) & events).sum())
        increments[int(tau)] = d / float(w[at_risk].sum())
    return np.arange(t_max + 1), np.cumsum(increments)


# ---------------------------------------------------------------------------
# schemas for the two clinical regressions


def _category_vocab(values: Sequence[str], universe: Iterable[str] = ()) -> tuple[str, ...]:
    """Vocabulary ordered by observed frequency (reference = most frequent).

    Ties break alphabetically; unobserved universe members trail the list so
    the encoding stays total over the action universe.
    """
    counts = Counter(values)
    observed = sorted(counts, key=lambda c: (-counts[c], c))
    extra = sorted(set(universe) - set(observed))
    vocab = tuple(observed + extra)
    if not vocab:
        raise DegenerateData("empty category vocabulary")
    return vocab


def period_health(period: TreatmentPeriod) -> str:
    return HEALTH_REMISSION if period.combination.is_none else HEALTH_NEEDS_TREATMENT


def build_clinical_schema(
    periods: Sequence[TreatmentPeriod],
    clinical: Sequence[ClinicalRecord],
    include_months_since_start: bool,
    action_labels: Iterable[str] = (),
) -> CovariateSchema:
    """Covariate schema shared by the death and recurrence regressions.

    Treatment is one-hot over every combination seen in the periods (plus any
    extra action labels), demographics over the cohort vocabularies.
    """
    features = [
        Feature("health", "category", (HEALTH_NEEDS_TREATMENT, HEALTH_REMISSION)),
        Feature(
            "treatment",
            "category",
            _category_vocab([p.combination.label() for p in periods], action_labels),
        ),
        Feature("prior_lines", "numeric"),
    ]
    if include_months_since_start:
        features.append(Feature("months_since_start", "numeric"))
    features += [
        Feature("age", "numeric"),
        Feature("race", "category", _category_vocab([r.race for r in clinical])),
        Feature("stage", "category", _category_vocab([r.tumor_stage for r in clinical])),
        Feature("grade", "category", _category_vocab([r.tumor_grade for r in clinical])),
    ]
    return CovariateSchema(tuple(features))


def _demographic_values(rec: ClinicalRecord) -> dict[str, object]:
    return {
        "age": rec.age_at_start,
        "race": rec.race,
        "stage": rec.tumor_stage,
        "grade": rec.tumor_grade,
    }


def fit_death_model(
    periods: Sequence[TreatmentPeriod],
    clinical: Sequence[ClinicalRecord],
    penalty: float = 0.1,
    action_labels: Iterable[str] = (),
) -> CoxModel:
    """Terminal death-event regression on the months-since-start timescale.

    One row per patient: duration = total months survived, event = death,
    covariates taken at the patient's final period.
    """
    schema = build_clinical_schema(
        periods, clinical, include_months_since_start=False, action_labels=action_labels
    )
    by_patient: dict[str, list[TreatmentPeriod]] = {}
    for p in periods:
        by_patient.setdefault(p.patient_id, []).append(p)

    rows, durations, events = [], [], []
    for rec in clinical:
        patient_periods = sorted(by_patient.get(rec.patient_id, []), key=lambda p: p.month_index)
        if not patient_periods:
            continue
        final = patient_periods[-1]
        values = {
            "health": period_health(final),
            "treatment": final.combination.label(),
            "prior_lines": final.prior_lines,
            **_demographic_values(rec),
        }
        rows.append(schema.encode(values))
        durations.append(len(patient_periods))
        events.append(any(p.death_this_period for p in patient_periods))
    if not rows or not any(events):
        raise DegenerateData("no death events in cohort")
    data = SurvivalDataset(np.array(rows), np.array(durations), np.array(events), schema)
    return fit_cox(data, penalty=penalty, timescale="since_treatment_start")


def fit_recurrence_model(
    periods: Sequence[TreatmentPeriod],
    clinical: Sequence[ClinicalRecord],
    penalty: float = 0.1,
    action_labels: Iterable[str] = (),
) -> CoxModel:
    """Gap-time recurrence regression over treatment runs.

    One row per maximal same-combination run: duration = run length in
    months, event = the run ended with a combination change.  The clock
    resets at each event, so the baseline is on the gap timescale.
    """
    schema = build_clinical_schema(
        periods, clinical, include_months_since_start=True, action_labels=action_labels
    )
    by_patient: dict[str, list[TreatmentPeriod]] = {}
    for p in periods:
        by_patient.setdefault(p.patient_id, []).append(p)
    clinical_by_id = {rec.patient_id: rec for rec in clinical}

    rows, durations, events = [], [], []
    for pid, patient_periods in sorted(by_patient.items()):
        rec = clinical_by_id.get(pid)
        if rec is None:
            continue
        patient_periods = sorted(patient_periods, key=lambda p: p.month_index)
        run_start = 0
        for i, period in enumerate(patient_periods):
            is_run_end = (
                i + 1 == len(patient_periods)
                or patient_periods[i + 1].combination != period.combination
            )
            if not is_run_end:
                continue
            first = patient_periods[run_start]
            values = {
                "health": period_health(first),
                "treatment": first.combination.label(),
                "prior_lines": first.prior_lines,
                "months_since_start": first.month_index,
                **_demographic_values(rec),
            }
            rows.append(schema.encode(values))
            durations.append(period.months_on_current)
            events.append(period.line_ended_this_period)
            run_start = i + 1
    if not rows or not any(events):
        raise DegenerateData("no line-change events in cohort")
    data = SurvivalDataset(np.array(rows), np.array(durations), np.array(events), schema)
    return fit_cox(data, penalty=penalty, timescale="gap_since_last_event")
