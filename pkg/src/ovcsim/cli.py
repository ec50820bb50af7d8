"""Command-line pipeline: synth -> ingest -> fit -> train -> evaluate -> report.

Every subcommand resolves its options from an optional flat key=value config
file overridden by flags, records input digests in a manifest before
processing, and refuses to overwrite existing outputs without --force.

Exit codes: 0 success, 2 usage/schema error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__, agents, cox, pipeline, stats, synth, training
from .env import ActionSet, CoxTransitionModel, TreatmentEnv, agent_schema
from .errors import (
    DegenerateData,
    NonConvergence,
    OvcsimError,
    SchemaViolation,
    SingularHessian,
    ZeroSurvival,
)

EXIT_USAGE = 2
EXIT_NUMERIC = 3

_NUMERIC_ERRORS = (NonConvergence, SingularHessian, DegenerateData, ZeroSurvival)


def default_standardization_path() -> Path:
    return Path(str(resources.files("ovcsim") / "data" / "drug_standardization.tsv"))


def default_regimens_path() -> Path:
    return Path(str(resources.files("ovcsim") / "data" / "nccn_regimens.txt"))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _load_flat_config(path: str | None) -> dict[str, str]:
    if not path:
        return {}
    values: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise SchemaViolation(f"{path}:{lineno}: expected key = value")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def _apply_config_file(args: argparse.Namespace, parser: argparse.ArgumentParser) -> None:
    """Config file fills in options the command line left at their default."""
    values = _load_flat_config(getattr(args, "config", None))
    for key, raw in values.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            raise SchemaViolation(f"unknown config key {key!r}")
        default = parser.get_default(attr)
        if getattr(args, attr) != default:
            continue  # explicit flag wins
        current = getattr(args, attr)
        if isinstance(default, bool) or isinstance(current, bool):
            value: object = raw.lower() in ("1", "true", "yes")
        elif isinstance(default, int) and default is not None:
            value = int(raw)
        elif isinstance(default, float) and default is not None:
            value = float(raw)
        else:
            value = raw
        setattr(args, attr, value)


def _prepare_out(out_dir: str, names: list[str], force: bool) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not force:
        clashes = [n for n in names if (out / n).exists()]
        if clashes:
            raise SchemaViolation(
                f"refusing to overwrite {', '.join(clashes)} in {out} (use --force)"
            )
    return out


def _write_manifest(
    out: Path,
    subcommand: str,
    config: dict,
    inputs: dict[str, Path],
    output_names: list[str],
    seed: int | None,
) -> None:
    doc = {
        "subcommand": subcommand,
        "tool_version": __version__,
        "seed": seed,
        "config": config,
        "inputs": {name: {"path": str(p), "sha256": _sha256(p)} for name, p in inputs.items()},
        "outputs": {name: _sha256(out / name) for name in output_names if (out / name).exists()},
    }
    (out / "manifest.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _resolved_config(args: argparse.Namespace) -> dict:
    skip = {"func", "config", "force", "subcommand_parser"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args: argparse.Namespace) -> int:
    outputs = ["clinical.csv", "drug_lines.csv", "ground_truth.json"]
    out = _prepare_out(args.out, outputs, args.force)
    cohort = synth.generate_cohort(args.seed, args.n_patients)
    synth.write_cohort(cohort, out)
    _write_manifest(out, "synth", _resolved_config(args), {}, outputs, args.seed)
    return 0


def cmd_ingest(args: argparse.Namespace) -> int:
    outputs = ["periods.csv", "cohort.csv", "demographics.json", "filter_report.json"]
    out = _prepare_out(args.out, outputs, args.force)
    inputs = {
        "clinical": Path(args.clinical),
        "drug_lines": Path(args.lines),
        "standardization": Path(args.standardization),
    }
    clinical = pipeline.read_clinical_csv(args.clinical)
    lines = pipeline.read_drug_lines_csv(args.lines)
    table = pipeline.load_standardization_table(args.standardization)
    lines, unknown_dropped = pipeline.standardize_lines(lines, table, strict=args.strict_drugs)
    clinical, lines, report = pipeline.filter_cohort(clinical, lines)
    report["lines_unknown_drug"] = unknown_dropped
    periods = pipeline.build_treatment_periods(clinical, lines)

    pipeline.write_periods_csv(periods, out / "periods.csv")
    pipeline.write_clinical_csv(clinical, out / "cohort.csv")
    if clinical:
        demo = pipeline.empirical_distributions(clinical)
        (out / "demographics.json").write_text(
            json.dumps(demo.as_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    (out / "filter_report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    _write_manifest(out, "ingest", _resolved_config(args), inputs, outputs, args.seed)
    return 0


def cmd_fit(args: argparse.Namespace) -> int:
    outputs = ["death_model.json", "recurrence_model.json"]
    out = _prepare_out(args.out, outputs, args.force)
    inputs = {"periods": Path(args.periods), "cohort": Path(args.cohort)}

    periods = pipeline.read_periods_csv(args.periods)
    clinical = pipeline.read_clinical_csv(args.cohort)
    death = cox.fit_death_model(periods, clinical, penalty=args.penalty)
    recurrence = cox.fit_recurrence_model(periods, clinical, penalty=args.penalty)
    death.to_json(out / "death_model.json")
    recurrence.to_json(out / "recurrence_model.json")
    _write_manifest(out, "fit", _resolved_config(args), inputs, outputs, args.seed)
    return 0


def _build_env(args: argparse.Namespace) -> tuple[TreatmentEnv, list[pipeline.TreatmentPeriod]]:
    periods = pipeline.read_periods_csv(args.periods)
    demo = pipeline.EmpiricalDemographics.from_dict(
        json.loads(Path(args.demographics).read_text(encoding="utf-8"))
    )
    labels = sorted({p.combination.label() for p in periods})
    action_set = ActionSet.from_labels(labels)
    if getattr(args, "restricted", False):
        action_set, _ = agents.restrict_actions(action_set, periods, min_count=args.min_count)
    model = CoxTransitionModel(
        death_model=cox.CoxModel.from_json(args.death_model),
        recurrence_model=cox.CoxModel.from_json(args.recurrence_model),
    )
    env = TreatmentEnv(
        transition_model=model,
        action_set=action_set,
        demographics=demo,
        horizon_cap=args.horizon_cap,
    )
    return env, periods


def _env_inputs(args: argparse.Namespace) -> dict[str, Path]:
    return {
        "periods": Path(args.periods),
        "demographics": Path(args.demographics),
        "death_model": Path(args.death_model),
        "recurrence_model": Path(args.recurrence_model),
    }


def cmd_train(args: argparse.Namespace) -> int:
    outputs = ["metrics.csv", "trajectories.jsonl", "run_config.json", "checkpoint_final.json"]
    out = _prepare_out(args.out, outputs, args.force)
    env, periods = _build_env(args)

    if args.agent == "dqn":
        schema = agent_schema(env.action_set, env.demographics)
        dqn_config = agents.DqnConfig(
            hidden_width=args.hidden_width,
            hidden_layers=args.hidden_layers,
            learning_rate=args.learning_rate,
            gamma=args.gamma,
            batch_size=args.batch_size,
            target_sync_period=args.target_sync_period,
        )
        init_rng = np.random.default_rng(np.random.SeedSequence((args.seed, 0xD9)))
        agent: object = agents.DqnAgent(schema, len(env.action_set), dqn_config, init_rng)
    elif args.agent == "nccn":
        agent = agents.NccnPolicy.from_file(args.nccn_regimens, env.action_set)
    else:
        agent = agents.RandomPolicy()

    config = training.TrainConfig(
        rounds=args.rounds,
        seed=args.seed,
        window=args.window,
        checkpoint_period=args.checkpoint_period,
    )
    (out / "run_config.json").write_text(
        json.dumps(_resolved_config(args), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    training.train(config, env, agent, out_dir=out)
    _write_manifest(out, "train", _resolved_config(args), _env_inputs(args), outputs, args.seed)
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    outputs = ["survival_sample.json"]
    out = _prepare_out(args.out, outputs, args.force)
    env, _ = _build_env(args)
    agent = agents.DqnAgent.load_checkpoint(args.checkpoint)
    survivals = training.evaluate(agent, env, args.n_episodes, seed=args.seed)
    (out / "survival_sample.json").write_text(
        json.dumps(
            {"label": "greedy_evaluation", "values": survivals.tolist()},
            indent=2,
            sort_keys=True,
        )
        + "\n",
        encoding="utf-8",
    )
    inputs = {**_env_inputs(args), "checkpoint": Path(args.checkpoint)}
    _write_manifest(out, "evaluate", _resolved_config(args), inputs, outputs, args.seed)
    return 0


def _read_trajectories(path: Path) -> dict[int, list[dict]]:
    episodes: dict[int, list[dict]] = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line:
            continue
        rec = json.loads(line)
        episodes.setdefault(rec["round"], []).append(rec)
    for steps in episodes.values():
        steps.sort(key=lambda r: r["step"])
    return episodes


def cmd_report(args: argparse.Namespace) -> int:
    outputs = ["comparison.json", "heatmap.csv", "lines.csv"]
    out = _prepare_out(args.out, outputs, args.force)
    run = Path(args.run)
    traj_path = run / "trajectories.jsonl"
    metrics_path = run / "metrics.csv"
    manifest_path = run / "manifest.json"
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        for name, want in manifest.get("outputs", {}).items():
            candidate = run / name
            if name in ("trajectories.jsonl", "metrics.csv") and candidate.exists():
                if _sha256(candidate) != want:
                    raise SchemaViolation(
                        f"{candidate}: digest mismatch against run manifest; refusing stale run"
                    )

    survivals = [
        int(line.split(",")[1])
        for line in metrics_path.read_text(encoding="utf-8").splitlines()[1:]
        if line
    ]
    window = min(args.window, max(1, len(survivals) // 2))
    first = stats.SurvivalSample(f"first_{window}", np.array(survivals[:window], dtype=float))
    last = stats.SurvivalSample(f"last_{window}", np.array(survivals[-window:], dtype=float))
    comparison = {
        "pair": [first.label, last.label],
        "mean_a": float(np.mean(first.values)),
        "mean_b": float(np.mean(last.values)),
        "summary_a": stats.survival_summary(first),
        "summary_b": stats.survival_summary(last),
    }
    try:
        comparison.update(stats.welch_t_test(first, last))
    except OvcsimError as exc:
        comparison["test_error"] = str(exc)
    stats.write_comparison_json([comparison], out / "comparison.json")

    episodes = _read_trajectories(traj_path)
    analysis_episodes = [
        [(rec["state"]["t"], rec["action_label"]) for rec in steps]
        for _, steps in sorted(episodes.items())
    ]
    matrix = stats.frequency_timing_matrix(analysis_episodes, interval_months=args.interval_months)
    stats.write_heatmap_csv(matrix, out / "heatmap.csv")
    stats.write_lines_csv(
        stats.line_frequencies(analysis_episodes, max_lines=args.max_lines), out / "lines.csv"
    )
    inputs = {"trajectories": traj_path, "metrics": metrics_path}
    _write_manifest(out, "report", _resolved_config(args), inputs, outputs, args.seed)
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="flat key=value config file; flags override")
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")
    p.add_argument("--out", required=True, help="output directory")


def _add_env_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--periods", required=True)
    p.add_argument("--demographics", required=True)
    p.add_argument("--death-model", dest="death_model", required=True)
    p.add_argument("--recurrence-model", dest="recurrence_model", required=True)
    p.add_argument("--restricted", action="store_true", help="restrict to common combinations")
    p.add_argument("--min-count", dest="min_count", type=int, default=5)
    p.add_argument("--horizon-cap", dest="horizon_cap", type=int, default=240)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ovcsim",
        description="Ovarian-cancer treatment simulator and treatment-policy trainer",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("synth", help="generate a synthetic cohort with known ground truth")
    _add_common(p)
    p.add_argument("--n-patients", dest="n_patients", type=int, default=1000)
    p.set_defaults(func=cmd_synth, subcommand_parser=p)

    p = sub.add_parser("ingest", help="standardize, filter, and build treatment periods")
    _add_common(p)
    p.add_argument("--clinical", required=True)
    p.add_argument("--lines", required=True)
    p.add_argument("--standardization", default=str(default_standardization_path()))
    p.add_argument("--strict-drugs", dest="strict_drugs", action="store_true")
    p.set_defaults(func=cmd_ingest, subcommand_parser=p)

    p = sub.add_parser("fit", help="fit the death and recurrence Cox models")
    _add_common(p)
    p.add_argument("--periods", required=True)
    p.add_argument("--cohort", required=True, help="filtered clinical CSV from ingest")
    p.add_argument("--penalty", type=float, default=0.1)
    p.set_defaults(func=cmd_fit, subcommand_parser=p)

    p = sub.add_parser("train", help="train an agent in the simulated environment")
    _add_common(p)
    _add_env_args(p)
    p.add_argument("--agent", choices=["dqn", "nccn", "random"], default="dqn")
    p.add_argument("--rounds", type=int, default=200_000)
    p.add_argument("--window", type=int, default=1000)
    p.add_argument("--checkpoint-period", dest="checkpoint_period", type=int, default=10_000)
    p.add_argument("--hidden-width", dest="hidden_width", type=int, default=128)
    p.add_argument("--hidden-layers", dest="hidden_layers", type=int, default=6)
    p.add_argument("--learning-rate", dest="learning_rate", type=float, default=0.01)
    p.add_argument("--gamma", type=float, default=0.99)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=128)
    p.add_argument("--target-sync-period", dest="target_sync_period", type=int, default=10)
    p.add_argument("--nccn-regimens", dest="nccn_regimens", default=str(default_regimens_path()))
    p.set_defaults(func=cmd_train, subcommand_parser=p)

    p = sub.add_parser("evaluate", help="greedy rollouts from a checkpoint")
    _add_common(p)
    _add_env_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n-episodes", dest="n_episodes", type=int, default=1000)
    p.set_defaults(func=cmd_evaluate, subcommand_parser=p)

    p = sub.add_parser("report", help="statistics and figure data from a training run")
    _add_common(p)
    p.add_argument("--run", required=True, help="training output directory")
    p.add_argument("--window", type=int, default=1000)
    p.add_argument("--interval-months", dest="interval_months", type=int, default=3)
    p.add_argument("--max-lines", dest="max_lines", type=int, default=6)
    p.set_defaults(func=cmd_report, subcommand_parser=p)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_config_file(args, getattr(args, "subcommand_parser", parser))
        return args.func(args)
    except SchemaViolation as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _NUMERIC_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OvcsimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
