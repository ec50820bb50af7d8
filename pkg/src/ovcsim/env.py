"""Monthly treatment environment.

Simulated patients start in the needs-treatment state; each month an agent
picks a drug combination and the two fitted Cox regressions stochastically
decide death, remission, or continued need for treatment.  Rewards are +1
per survived month and -1 on death.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Iterable, Protocol, Sequence

import numpy as np

from .cox import (
    HEALTH_NEEDS_TREATMENT,
    HEALTH_REMISSION,
    CovariateSchema,
    CoxModel,
    Feature,
    _category_vocab,
)
from .errors import IllegalAction, NoLegalActions, TerminalState
from .pipeline import NO_TREATMENT, DrugCombination, EmpiricalDemographics

DEFAULT_HORIZON_CAP = 240


class Health(str, Enum):
    NEEDS_TREATMENT = "NEEDS_TREATMENT"
    REMISSION = "REMISSION"
    DEAD = "DEAD"


@dataclass(frozen=True)
class PatientState:
    health: Health
    months_since_start: int
    months_on_current: int
    prior_lines: int
    combination: DrugCombination
    age: int
    race: str
    stage: str
    grade: str

    def as_dict(self) -> dict:
        return {
            "health": self.health.value,
            "t": self.months_since_start,
            "months_on_current": self.months_on_current,
            "prior_lines": self.prior_lines,
            "combination": self.combination.label(),
            "age": self.age,
            "race": self.race,
            "stage": self.stage,
            "grade": self.grade,
        }


@dataclass(frozen=True)
class ActionSet:
    """Ordered drug combinations with stable indices; NONE always present."""

    combinations: tuple[DrugCombination, ...]

    def __post_init__(self) -> None:
        if NO_TREATMENT not in self.combinations:
            raise ValueError("action set must contain the no-treatment action")
        if len(set(self.combinations)) != len(self.combinations):
            raise ValueError("duplicate actions")

    @classmethod
    def from_labels(cls, labels: Iterable[str]) -> "ActionSet":
        combos = [DrugCombination.parse(lab) for lab in labels]
        if NO_TREATMENT not in combos:
            combos.insert(0, NO_TREATMENT)
        return cls(tuple(combos))

    def __len__(self) -> int:
        return len(self.combinations)

    def labels(self) -> list[str]:
        return [c.label() for c in self.combinations]

    def index_of(self, combo: DrugCombination) -> int:
        return self.combinations.index(combo)

    @property
    def no_treatment_index(self) -> int:
        return self.combinations.index(NO_TREATMENT)


@dataclass(frozen=True)
class TransitionProbabilities:
    p_death: float
    p_remission: float

    @property
    def p_survive(self) -> float:
        return 1.0 - self.p_death

    @property
    def p_treatment(self) -> float:
        return 1.0 - self.p_remission


@dataclass(frozen=True)
class Transition:
    state: PatientState
    action: int
    reward: int
    next_state: PatientState
    done: bool
    capped: bool = False


class TransitionModel(Protocol):
    """Maps (state, chosen action, advanced clocks) to monthly event probabilities."""

    def probs(
        self, state: PatientState, action: DrugCombination, t_next: int, months_on_next: int
    ) -> TransitionProbabilities: ...


@dataclass
class CoxTransitionModel:
    """The paper's dynamics: death and recurrence Cox models sampled monthly."""

    death_model: CoxModel
    recurrence_model: CoxModel

    def probs(
        self, state: PatientState, action: DrugCombination, t_next: int, months_on_next: int
    ) -> TransitionProbabilities:
        base = {
            "health": state.health.value,
            "treatment": action.label(),
            "prior_lines": _advance_prior_lines(state, action),
            "age": state.age,
            "race": state.race,
            "stage": state.stage,
            "grade": state.grade,
        }
        assert self.death_model.schema is not None and self.recurrence_model.schema is not None
        x_death = self.death_model.schema.encode(base)
        x_rec = self.recurrence_model.schema.encode({**base, "months_since_start": t_next})
        return TransitionProbabilities(
            p_death=self.death_model.conditional_event_prob(x_death, t_next),
            p_remission=self.recurrence_model.conditional_event_prob(x_rec, months_on_next),
        )


@dataclass
class PinnedTransitionModel:
    """Fixed probabilities, optionally per action label; for tests and sanity MDPs."""

    p_death: float | dict[str, float]
    p_remission: float | dict[str, float] = 0.0

    def _lookup(self, table: float | dict[str, float], label: str) -> float:
        if isinstance(table, dict):
            return table[label]
        return table

    def probs(
        self, state: PatientState, action: DrugCombination, t_next: int, months_on_next: int
    ) -> TransitionProbabilities:
        label = action.label()
        return TransitionProbabilities(
            p_death=self._lookup(self.p_death, label),
            p_remission=self._lookup(self.p_remission, label),
        )


def _advance_clocks(state: PatientState, action: DrugCombination) -> tuple[int, int, int]:
    """(t', months_on_current', prior_lines') after taking `action`."""
    t_next = state.months_since_start + 1
    if action == state.combination:
        moc_next = state.months_on_current + 1
    else:
        moc_next = 1
    return t_next, moc_next, _advance_prior_lines(state, action)


def _advance_prior_lines(state: PatientState, action: DrugCombination) -> int:
    # increments only on change to a different non-NONE combination
    if action != state.combination and not action.is_none:
        return state.prior_lines + 1
    return state.prior_lines


class Policy(Protocol):
    def begin_episode(self) -> None: ...

    def select(
        self, state: PatientState, legal: Sequence[int], rng: np.random.Generator
    ) -> int: ...


@dataclass
class TreatmentEnv:
    transition_model: TransitionModel
    action_set: ActionSet
    demographics: EmpiricalDemographics
    horizon_cap: int = DEFAULT_HORIZON_CAP

    def __post_init__(self) -> None:
        if self.horizon_cap < 1:
            raise ValueError("horizon_cap must be >= 1")

    def reset(self, rng: np.random.Generator) -> PatientState:
        """Fresh patient: needs treatment at t = 0, demographics resampled."""

        def draw(table: list[tuple[str, float]]) -> str:
            cats = [c for c, _ in table]
            freqs = np.array([f for _, f in table])
            return cats[rng.choice(len(cats), p=freqs / freqs.sum())]

        return PatientState(
            health=Health.NEEDS_TREATMENT,
            months_since_start=0,
            months_on_current=0,
            prior_lines=0,
            combination=NO_TREATMENT,
            age=int(rng.choice(self.demographics.ages)),
            race=draw(self.demographics.race),
            stage=draw(self.demographics.stage),
            grade=draw(self.demographics.grade),
        )

    def legal_actions(self, state: PatientState) -> list[int]:
        if state.health == Health.DEAD:
            raise TerminalState("dead patients have no actions")
        none_idx = self.action_set.no_treatment_index
        if state.health == Health.REMISSION:
            return [none_idx]
        return [i for i in range(len(self.action_set)) if i != none_idx]

    def transition_probs(self, state: PatientState, action: int) -> TransitionProbabilities:
        self._check_legal(state, action)
        combo = self.action_set.combinations[action]
        t_next, moc_next, _ = _advance_clocks(state, combo)
        return self.transition_model.probs(state, combo, t_next, moc_next)

    def step(self, state: PatientState, action: int, rng: np.random.Generator) -> Transition:
        self._check_legal(state, action)
        combo = self.action_set.combinations[action]
        t_next, moc_next, prior_next = _advance_clocks(state, combo)

        if t_next >= self.horizon_cap:
            next_state = self._successor(state, Health.DEAD, combo, t_next, moc_next, prior_next)
            return Transition(state, action, -1, next_state, done=True, capped=True)

        probs = self.transition_model.probs(state, combo, t_next, moc_next)
        if rng.random() < probs.p_death:
            next_health = Health.DEAD
        elif rng.random() < probs.p_remission:
            next_health = Health.REMISSION
        else:
            next_health = Health.NEEDS_TREATMENT

        next_state = self._successor(state, next_health, combo, t_next, moc_next, prior_next)
        done = next_health == Health.DEAD
        return Transition(state, action, -1 if done else 1, next_state, done=done)

    def _successor(
        self,
        state: PatientState,
        health: Health,
        combo: DrugCombination,
        t_next: int,
        moc_next: int,
        prior_next: int,
    ) -> PatientState:
        if health == Health.REMISSION:
            # remission carries no active treatment; months_on_current counts
            # consecutive no-treatment months
            if state.combination.is_none:
                moc = state.months_on_current + 1
            else:
                moc = 1
            combo, moc_next = NO_TREATMENT, moc
        return replace(
            state,
            health=health,
            months_since_start=t_next,
            months_on_current=moc_next,
            prior_lines=prior_next,
            combination=combo,
        )

    def _check_legal(self, state: PatientState, action: int) -> None:
        legal = self.legal_actions(state)
        if action not in legal:
            raise IllegalAction(f"action {action} illegal in health {state.health.value}")

    def run_episode(
        self, policy: Policy, rng: np.random.Generator
    ) -> tuple[list[Transition], int, int]:
        """One full patient: returns (trajectory, survival_months, return)."""
        policy.begin_episode()
        state = self.reset(rng)
        trajectory: list[Transition] = []
        while True:
            legal = self.legal_actions(state)
            if not legal:
                raise NoLegalActions("empty legal set")
            action = policy.select(state, legal, rng)
            tr = self.step(state, action, rng)
            trajectory.append(tr)
            if tr.done:
                break
            state = tr.next_state
        survival_months = sum(1 for tr in trajectory if tr.reward > 0)
        episode_return = sum(tr.reward for tr in trajectory)
        return trajectory, survival_months, episode_return


# ---------------------------------------------------------------------------
# state encoding for value networks


def agent_schema(action_set: ActionSet, demographics: EmpiricalDemographics) -> CovariateSchema:
    """Encoding of the full patient state shown to a Q-network."""
    return CovariateSchema(
        (
            Feature("health", "category", (HEALTH_NEEDS_TREATMENT, HEALTH_REMISSION)),
            Feature("months_since_start", "numeric"),
            Feature("months_on_current", "numeric"),
            Feature("prior_lines", "numeric"),
            Feature("treatment", "category", ("NONE", *sorted(set(action_set.labels()) - {"NONE"}))),
            Feature("age", "numeric"),
            Feature("race", "category", _category_vocab([c for c, _ in demographics.race])),
            Feature("stage", "category", _category_vocab([c for c, _ in demographics.stage])),
            Feature("grade", "category", _category_vocab([c for c, _ in demographics.grade])),
        )
    )


# numeric features are scaled to roughly unit range before they reach the
# value network; raw month counters (0..240) destabilize the regression
_NUMERIC_SCALES = {
    "months_since_start": 1.0 / DEFAULT_HORIZON_CAP,
    "months_on_current": 1.0 / DEFAULT_HORIZON_CAP,
    "prior_lines": 1.0 / 10.0,
    "age": 1.0 / 100.0,
}


def encode_state(state: PatientState, schema: CovariateSchema) -> np.ndarray:
    return schema.encode(
        {
            "health": state.health.value,
            "months_since_start": state.months_since_start * _NUMERIC_SCALES["months_since_start"],
            "months_on_current": state.months_on_current * _NUMERIC_SCALES["months_on_current"],
            "prior_lines": state.prior_lines * _NUMERIC_SCALES["prior_lines"],
            "treatment": state.combination.label(),
            "age": state.age * _NUMERIC_SCALES["age"],
            "race": state.race,
            "stage": state.stage,
            "grade": state.grade,
        }
    )


def episode_rng(seed: int, round_index: int, stream: int = 0) -> np.random.Generator:
    """Independent, reproducible stream for one (seed, round) pair."""
    return np.random.default_rng(np.random.SeedSequence((seed, round_index, stream)))
