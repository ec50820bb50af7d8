"""Action-selection policies.

The DQN agent (epsilon-greedy behavior, replay memory, target network,
temporal-difference regression), a rules-based guideline agent, a uniform
random baseline, and the restricted-action helper.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import nn
from .cox import CovariateSchema
from .env import ActionSet, Health, PatientState, Transition, TreatmentEnv, encode_state
from .errors import (
    EmptyRegimenList,
    EmptyReplay,
    IncompatibleCheckpoint,
    NoLegalActions,
)
from .pipeline import NO_TREATMENT, DrugCombination, TreatmentPeriod

CHECKPOINT_FORMAT_VERSION = 1

EPSILON_START = 0.9
EPSILON_FLOOR = 0.05
EPSILON_FLOOR_ROUND = 50_000
# multiplicative per-round decay chosen so the schedule hits the floor at
# EPSILON_FLOOR_ROUND
EPSILON_DECAY = (EPSILON_FLOOR / EPSILON_START) ** (1.0 / EPSILON_FLOOR_ROUND)


def epsilon_at(round_index: int, decay: float = EPSILON_DECAY) -> float:
    """Exploration rate: 0.9 * decay^round, floored at 0.05."""
    if round_index < 0:
        raise ValueError("round must be >= 0")
    return max(EPSILON_FLOOR, EPSILON_START * decay**round_index)


@dataclass(frozen=True)
class ReplayItem:
    """One stored transition, pre-encoded for the value network."""

    state: np.ndarray
    action: int
    reward: int
    next_state: np.ndarray | None
    done: bool
    next_legal: tuple[int, ...]


class ReplayMemory:
    """Bounded FIFO of transitions; eviction is strictly oldest-first.

    Backed by a ring buffer so uniform sampling is O(1) per draw.
    """

    def __init__(self, capacity: int = 100_000):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items: list[ReplayItem] = []
        self._next = 0

    def push(self, item: ReplayItem) -> None:
        if len(self._items) < self.capacity:
            self._items.append(item)
        else:
            self._items[self._next] = item
        self._next = (self._next + 1) % self.capacity

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[ReplayItem]:
        if not self._items:
            raise EmptyReplay("replay memory is empty")
        idx = rng.integers(0, len(self._items), size=min(batch_size, len(self._items)))
        return [self._items[i] for i in idx]

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self):
        """Oldest-to-newest iteration over surviving items."""
        if len(self._items) < self.capacity:
            return iter(self._items)
        return iter(self._items[self._next :] + self._items[: self._next])


class RandomPolicy:
    """Uniform over the legal actions."""

    def begin_episode(self) -> None:
        pass

    def select(self, state: PatientState, legal: Sequence[int], rng: np.random.Generator) -> int:
        if not legal:
            raise NoLegalActions("empty legal set")
        return int(legal[rng.integers(0, len(legal))])


@dataclass
class DqnConfig:
    hidden_width: int = 128
    hidden_layers: int = 6
    learning_rate: float = 0.01
    gamma: float = 0.99
    epsilon_start: float = EPSILON_START
    epsilon_floor: float = EPSILON_FLOOR
    epsilon_decay: float = EPSILON_DECAY
    replay_capacity: int = 100_000
    batch_size: int = 128
    target_sync_period: int = 10


class DqnAgent:
    """Deep Q-learning over encoded patient states.

    Behavior is epsilon-greedy over the legal actions; the target network is
    a lagged copy of the online network, refreshed every
    ``target_sync_period`` rounds.
    """

    def __init__(self, schema: CovariateSchema, n_actions: int, config: DqnConfig, rng: np.random.Generator):
        self.schema = schema
        self.n_actions = n_actions
        self.config = config
        self.online = nn.init_mlp(
            schema.dimension(), config.hidden_width, n_actions, rng, config.hidden_layers
        )
        self.target = self.online.clone()
        self.opt_state = nn.RmsPropState.for_net(self.online, lr=config.learning_rate)
        self.replay = ReplayMemory(config.replay_capacity)
        self.rounds_seen = 0
        self.optimize_calls = 0
        self.greedy = False

    # -- policy protocol ---------------------------------------------------

    def begin_episode(self) -> None:
        pass

    def epsilon(self) -> float:
        if self.greedy:
            return 0.0
        return max(
            self.config.epsilon_floor,
            self.config.epsilon_start * self.config.epsilon_decay**self.rounds_seen,
        )

    def encode(self, state: PatientState) -> np.ndarray:
        return encode_state(state, self.schema)

    def select(self, state: PatientState, legal: Sequence[int], rng: np.random.Generator) -> int:
        if not legal:
            raise NoLegalActions("empty legal set")
        legal = sorted(legal)
        if rng.random() < self.epsilon():
            return int(legal[rng.integers(0, len(legal))])
        q = nn.forward(self.online, self.encode(state))
        # argmax over legal actions; ties break toward the lowest index
        return int(legal[int(np.argmax(q[legal]))])

    # -- learning ----------------------------------------------------------

    def remember(self, transition: Transition, env: TreatmentEnv) -> None:
        done = transition.done
        self.replay.push(
            ReplayItem(
                state=self.encode(transition.state),
                action=transition.action,
                reward=transition.reward,
                next_state=None if done else self.encode(transition.next_state),
                done=done,
                next_legal=() if done else tuple(env.legal_actions(transition.next_state)),
            )
        )

    def td_targets(self, batch: Sequence[ReplayItem]) -> np.ndarray:
        """y = r for terminal transitions, else r + gamma * max_legal Q_target(s')."""
        if not batch:
            raise ValueError("empty batch")
        targets = np.empty(len(batch))
        live = [i for i, item in enumerate(batch) if not item.done]
        for i, item in enumerate(batch):
            targets[i] = item.reward
        if live:
            nexts = np.stack([batch[i].next_state for i in live])
            q_next = nn.forward(self.target, nexts)
            for row, i in enumerate(live):
                legal = list(batch[i].next_legal)
                targets[i] += self.config.gamma * float(np.max(q_next[row, legal]))
        return targets

    def optimize(self, rng: np.random.Generator) -> float:
        """One minibatch TD regression step; returns the smooth-L1 loss."""
        batch = self.replay.sample(self.config.batch_size, rng)
        states = np.stack([item.state for item in batch])
        actions = np.array([item.action for item in batch])
        q_all, cache = nn.forward_cached(self.online, states)
        preds = q_all[np.arange(len(batch)), actions]
        targets = self.td_targets(batch)
        loss, dpred = nn.smooth_l1(preds, targets)
        upstream = np.zeros_like(q_all)
        upstream[np.arange(len(batch)), actions] = dpred
        grads_w, grads_b = nn.backward(self.online, cache, upstream)
        nn.rmsprop_step(self.online, grads_w, grads_b, self.opt_state)
        self.optimize_calls += 1
        return loss

    def end_round(self) -> None:
        self.rounds_seen += 1
        if self.rounds_seen % self.config.target_sync_period == 0:
            self.sync_target()

    def sync_target(self) -> None:
        self.target = self.online.clone()

    # -- checkpointing -----------------------------------------------------

    def save_checkpoint(self, path: str | Path, include_replay: bool = True) -> None:
        doc = {
            "version": CHECKPOINT_FORMAT_VERSION,
            "config": vars(self.config),
            "schema": self.schema.as_dict(),
            "n_actions": self.n_actions,
            "rounds_seen": self.rounds_seen,
            "replay_size": len(self.replay),
            "online": nn.net_to_dict(self.online),
            "target": nn.net_to_dict(self.target),
            "optimizer": nn.rmsprop_to_dict(self.opt_state),
        }
        if include_replay:
            doc["replay"] = [
                {
                    "state": item.state.tolist(),
                    "action": item.action,
                    "reward": item.reward,
                    "next_state": None if item.next_state is None else item.next_state.tolist(),
                    "done": item.done,
                    "next_legal": list(item.next_legal),
                }
                for item in self.replay
            ]
        Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load_checkpoint(cls, path: str | Path) -> "DqnAgent":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        if doc.get("version") != CHECKPOINT_FORMAT_VERSION:
            raise IncompatibleCheckpoint(f"{path}: version {doc.get('version')}")
        config = DqnConfig(**doc["config"])
        schema = CovariateSchema.from_dict(doc["schema"])
        agent = cls.__new__(cls)
        agent.schema = schema
        agent.n_actions = doc["n_actions"]
        agent.config = config
        agent.online = nn.net_from_dict(doc["online"])
        agent.target = nn.net_from_dict(doc["target"])
        agent.opt_state = nn.rmsprop_from_dict(doc["optimizer"], agent.online)
        agent.replay = ReplayMemory(config.replay_capacity)
        agent.rounds_seen = doc["rounds_seen"]
        agent.optimize_calls = 0
        agent.greedy = False
        for item in doc.get("replay", []):
            agent.replay.push(
                ReplayItem(
                    state=np.array(item["state"], dtype=float),
                    action=item["action"],
                    reward=item["reward"],
                    next_state=None
                    if item["next_state"] is None
                    else np.array(item["next_state"], dtype=float),
                    done=item["done"],
                    next_legal=tuple(item["next_legal"]),
                )
            )
        return agent


# ---------------------------------------------------------------------------
# rules-based guideline agent


@dataclass
class NccnPolicy:
    """Guideline agent: preferred regimens first, other recommended after recurrence.

    Recurrence is a return to the needs-treatment state after a remission that
    followed active treatment.  A regimen is drawn at random when a treatment
    phase starts and kept until the phase changes.
    """

    action_set: ActionSet
    preferred: tuple[int, ...]
    other_recommended: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.preferred or not self.other_recommended:
            raise EmptyRegimenList("regimen lists must be non-empty")
        self._reset_memory()

    def _reset_memory(self) -> None:
        self._treated = False
        self._seen_remission_after_treatment = False
        self._recurred = False
        self._current_choice: int | None = None

    @classmethod
    def from_file(cls, path: str | Path, action_set: ActionSet) -> "NccnPolicy":
        preferred_labels, other_labels = load_regimen_file(path)
        labels = set(action_set.labels())

        def resolve(names: list[str], section: str) -> tuple[int, ...]:
            idx = tuple(
                action_set.index_of(DrugCombination.parse(lab))
                for lab in names
                if lab in labels
            )
            if not idx:
                raise EmptyRegimenList(f"no [{section}] regimen is present in the action set")
            return idx

        return cls(
            action_set=action_set,
            preferred=resolve(preferred_labels, "preferred"),
            other_recommended=resolve(other_labels, "other_recommended"),
        )

    def begin_episode(self) -> None:
        self._reset_memory()

    def select(self, state: PatientState, legal: Sequence[int], rng: np.random.Generator) -> int:
        if state.health == Health.REMISSION:
            if self._treated:
                self._seen_remission_after_treatment = True
            self._current_choice = None
            return self.action_set.no_treatment_index
        if self._seen_remission_after_treatment:
            self._recurred = True
            self._seen_remission_after_treatment = False
            self._current_choice = None
        if self._current_choice is None:
            pool = self.other_recommended if self._recurred else self.preferred
            self._current_choice = int(pool[rng.integers(0, len(pool))])
        self._treated = True
        return self._current_choice


def load_regimen_file(path: str | Path) -> tuple[list[str], list[str]]:
    """Parse the two-section regimen file: [preferred] / [other_recommended]."""
    sections: dict[str, list[str]] = {"preferred": [], "other_recommended": []}
    current: list[str] | None = None
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1]
            if name not in sections:
                raise ValueError(f"{path}:{lineno}: unknown section {name!r}")
            current = sections[name]
        elif current is None:
            raise ValueError(f"{path}:{lineno}: regimen before any section header")
        else:
            current.append(DrugCombination.parse(line).label())
    return sections["preferred"], sections["other_recommended"]


# ---------------------------------------------------------------------------
# restricted action set


def restrict_actions(
    action_set: ActionSet,
    periods: Sequence[TreatmentPeriod],
    min_count: int = 5,
) -> tuple[ActionSet, dict[int, int]]:
    """Keep NONE plus combinations occurring at least min_count times.

    Returns the restricted set and a stable old-index -> new-index map.
    """
    counts = Counter(p.combination for p in periods)
    kept = [
        combo
        for combo in action_set.combinations
        if combo == NO_TREATMENT or counts[combo] >= min_count
    ]
    restricted = ActionSet(tuple(kept))
    remap = {action_set.index_of(c): i for i, c in enumerate(restricted.combinations)}
    return restricted, remap
