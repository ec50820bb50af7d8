"""Training orchestration: round loop, metrics, checkpoints, evaluation."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .agents import DqnAgent
from .env import Policy, Transition, TreatmentEnv, episode_rng

METRICS_HEADER = "round,survival_months,return,sma1000,cma,epsilon,loss"

# RNG stream tags: one independent stream per (seed, round, purpose)
_STREAM_EPISODE = 0
_STREAM_OPTIMIZE = 1


@dataclass
class TrainConfig:
    rounds: int
    seed: int = 0
    window: int = 1000
    checkpoint_period: int = 10_000
    flush_every: int = 100

    def __post_init__(self) -> None:
        if self.rounds < 1 or self.window < 1:
            raise ValueError("rounds and window must be >= 1")


@dataclass
class MetricsRow:
    round: int
    survival_months: int
    episode_return: int
    sma: float | None
    cma: float
    epsilon: float
    loss: float | None

    def csv_line(self) -> str:
        sma = "" if self.sma is None else repr(self.sma)
        loss = "" if self.loss is None else repr(self.loss)
        return (
            f"{self.round},{self.survival_months},{self.episode_return},"
            f"{sma},{repr(self.cma)},{repr(self.epsilon)},{loss}"
        )


@dataclass
class TrainResult:
    metrics: list[MetricsRow]
    optimize_calls: int = 0


def _transition_json(round_index: int, step: int, tr: Transition, action_label: str) -> str:
    return json.dumps(
        {
            "round": round_index,
            "step": step,
            "state": tr.state.as_dict(),
            "action": tr.action,
            "action_label": action_label,
            "reward": tr.reward,
            "done": tr.done,
            "capped": tr.capped,
        },
        sort_keys=True,
    )


def train(
    config: TrainConfig,
    env: TreatmentEnv,
    agent: Policy,
    out_dir: str | Path | None = None,
    start_round: int = 0,
) -> TrainResult:
    """Run the round loop: one simulated patient per round.

    For a DQN agent every transition is pushed into replay and one minibatch
    optimization runs per round.  Deterministic for a fixed seed: each round
    derives its own RNG streams from (seed, round).

    When resuming (start_round > 0) the metrics file is appended to and the
    sma/cma accumulators are rebuilt from it.
    """
    is_dqn = isinstance(agent, DqnAgent)
    out = Path(out_dir) if out_dir is not None else None
    metrics_path = traj_path = None
    survivals_all: list[int] = []
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        metrics_path = out / "metrics.csv"
        traj_path = out / "trajectories.jsonl"
        if start_round == 0:
            metrics_path.write_text(METRICS_HEADER + "\n", encoding="utf-8")
            traj_path.write_text("", encoding="utf-8")
        elif metrics_path.exists():
            survivals_all = [
                int(line.split(",")[1])
                for line in metrics_path.read_text(encoding="utf-8").splitlines()[1:]
                if line
            ]

    window = deque(survivals_all[-config.window :], maxlen=config.window)
    cum_sum = sum(survivals_all)
    n_seen = len(survivals_all)

    rows: list[MetricsRow] = []
    pending_metrics: list[str] = []
    pending_traj: list[str] = []
    result = TrainResult(metrics=rows)

    def flush() -> None:
        if metrics_path is not None and pending_metrics:
            with metrics_path.open("a", encoding="utf-8") as f:
                f.write("\n".join(pending_metrics) + "\n")
            pending_metrics.clear()
        if traj_path is not None and pending_traj:
            with traj_path.open("a", encoding="utf-8") as f:
                f.write("\n".join(pending_traj) + "\n")
            pending_traj.clear()

    for round_index in range(start_round, config.rounds):
        rng = episode_rng(config.seed, round_index, _STREAM_EPISODE)
        epsilon = agent.epsilon() if is_dqn else 0.0
        trajectory, survival_months, episode_return = env.run_episode(agent, rng)

        loss = None
        if is_dqn:
            for tr in trajectory:
                agent.remember(tr, env)
            opt_rng = episode_rng(config.seed, round_index, _STREAM_OPTIMIZE)
            loss = agent.optimize(opt_rng)
            agent.end_round()
            result.optimize_calls += 1

        n_seen += 1
        cum_sum += survival_months
        window.append(survival_months)
        row = MetricsRow(
            round=round_index,
            survival_months=survival_months,
            episode_return=episode_return,
            sma=(sum(window) / config.window) if n_seen >= config.window else None,
            cma=cum_sum / n_seen,
            epsilon=epsilon,
            loss=loss,
        )
        rows.append(row)
        pending_metrics.append(row.csv_line())
        pending_traj.extend(
            _transition_json(
                round_index, step, tr, env.action_set.combinations[tr.action].label()
            )
            for step, tr in enumerate(trajectory)
        )
        if (round_index + 1) % config.flush_every == 0:
            flush()
        if out is not None and is_dqn and (round_index + 1) % config.checkpoint_period == 0:
            flush()
            agent.save_checkpoint(out / f"checkpoint_{round_index + 1:07d}.json")
    flush()
    if out is not None and is_dqn:
        agent.save_checkpoint(out / "checkpoint_final.json")
    return result


def evaluate(
    agent: Policy,
    env: TreatmentEnv,
    n_episodes: int,
    seed: int = 0,
) -> np.ndarray:
    """Frozen-policy rollouts: greedy for DQN agents, no learning.

    Returns the survival months of each episode.
    """
    is_dqn = isinstance(agent, DqnAgent)
    was_greedy = getattr(agent, "greedy", False)
    if is_dqn:
        agent.greedy = True
    try:
        survivals = np.empty(n_episodes, dtype=int)
        for i in range(n_episodes):
            rng = episode_rng(seed, i, _STREAM_EPISODE)
            _, survival_months, _ = env.run_episode(agent, rng)
            survivals[i] = survival_months
    finally:
        if is_dqn:
            agent.greedy = was_greedy
    return survivals
