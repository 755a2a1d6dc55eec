"""Command-line entry point: train, simulate, evaluate, league.

Exit codes: 0 success, 2 configuration error, 3 training divergence,
4 incompatible checkpoint.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import yaml

from . import __version__
from .env import ActionLayout
from .evaluation import RecordError, read_records, run_league, simulate, summary_tables, write_tables
from .ippo.checkpoint import CheckpointError, load_checkpoint
from .ippo.config import PRESETS, TrainConfig, preset
from .ippo.train import TrainingDiverged, train
from .scenario import Scenario, ScenarioError, file_hash, load_scenario

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_INCOMPATIBLE = 0, 2, 3, 4
OUT_ENV = "LTMARKET_OUT"


class ConfigError(ValueError):
    pass


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def write_manifest(path: Path, command: str, scenario_path: Path | None, config: dict, seed: int | None,
                   started: str, artifacts: list[Path]) -> Path:
    doc = {
        "command": command, "tool_version": __version__, "seed": seed, "config": config,
        "scenario": str(scenario_path) if scenario_path else None,
        "scenario_hash": file_hash(scenario_path) if scenario_path else None,
        "started": started, "finished": _now(), "artifacts": sorted(str(p) for p in artifacts),
    }
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)
    return path


def _default_out(args, name: str) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get(OUT_ENV, "runs")) / name


def _train_config(args) -> TrainConfig:
    cfg = preset(args.preset)
    if args.config:
        try:
            doc = yaml.safe_load(Path(args.config).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"train config {args.config}: {exc}") from None
        try:
            cfg = TrainConfig.from_dict({**cfg.to_dict(), **doc})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"train config {args.config}: {exc}") from None
    changes = {"seed": args.seed, "workers": args.workers}
    if args.budget_iters is not None:
        changes["iterations"] = args.budget_iters
    if args.budget_seconds is not None:
        changes["time_budget_s"] = args.budget_seconds
    if args.checkpoint_interval is not None:
        changes["checkpoint_interval"] = args.checkpoint_interval
    try:
        return replace(cfg, **changes)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cmd_train(args) -> int:
    started = _now()
    scn = load_scenario(args.scenario)
    cfg = _train_config(args)
    out = _default_out(args, "train")
    result = train(scn, cfg, out)
    arts = [*result.checkpoints, result.metrics_path]
    write_manifest(out / "manifest.json", "train", Path(args.scenario), cfg.to_dict(), cfg.seed, started, arts)
    print(f"trained {result.iterations} iterations; checkpoint {result.checkpoints[-1]}")
    return EXIT_OK


def _load_compatible(path: str, scn: Scenario):
    ps = load_checkpoint(path)
    layout = ActionLayout.from_scenario(scn).to_dict()
    if ps.layout != layout or ps.tech_set_hash != scn.tech_set_hash():
        diff = {k: (ps.layout.get(k), layout.get(k)) for k in layout if ps.layout.get(k) != layout.get(k)}
        raise CheckpointError(f"{path} is incompatible with the scenario; layout diff (checkpoint, scenario): "
                              f"{json.dumps(diff)}" + ("" if diff else " (technology parameters differ)"))
    missing = {a.id for a in scn.agents} - set(ps.agents)
    if missing:
        raise CheckpointError(f"{path} has no policy for agents {sorted(missing)}")
    return ps


def cmd_simulate(args) -> int:
    started = _now()
    scn = load_scenario(args.scenario)
    ps = _load_compatible(args.checkpoint, scn)
    out = Path(args.out) if args.out else _default_out(args, "simulate") / "records.jsonl"
    out.parent.mkdir(parents=True, exist_ok=True)
    simulate(ps, scn, args.episodes, args.seed, out, args.workers)
    cfg = {"checkpoint": args.checkpoint, "episodes": args.episodes}
    write_manifest(out.with_name(out.name + ".manifest.json"), "simulate", Path(args.scenario), cfg, args.seed,
                   started, [out])
    print(f"wrote {args.episodes} episodes to {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    started = _now()
    header, records = read_records(args.records)
    scn = Scenario.from_dict(header["scenario"])
    out = _default_out(args, "evaluate")
    paths = write_tables(summary_tables(records, scn), out)
    write_manifest(out / "manifest.json", "evaluate", None, {"records": args.records}, header.get("seed"),
                   started, paths)
    print(f"wrote {len(paths)} tables to {out}")
    return EXIT_OK


def cmd_league(args) -> int:
    started = _now()
    if len(set(map(os.path.realpath, args.checkpoints))) != len(args.checkpoints):
        raise ConfigError("duplicate checkpoint entries")
    scn = load_scenario(args.scenario)
    sets = [_load_compatible(p, scn) for p in args.checkpoints]
    table = run_league(sets, scn, args.rounds, args.episodes_per_lineup, args.seed, names=args.checkpoints,
                       workers=args.workers)
    out = Path(args.out) if args.out else _default_out(args, "league") / "league.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = out.with_name(out.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rank", "config", "score", "appearances"])
        for row in table.rows():
            w.writerow([row["rank"], row["config"], repr(row["score"]), row["appearances"]])
    os.replace(tmp, out)
    cfg = {"checkpoints": args.checkpoints, "rounds": args.rounds, "episodes_per_lineup": args.episodes_per_lineup}
    write_manifest(out.with_name(out.name + ".manifest.json"), "league", Path(args.scenario), cfg, args.seed,
                   started, [out])
    for row in table.rows():
        print(f"{row['rank']:>3}  {row['score']:+.4f}  {row['config']}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ltmarket", description="Long-term electricity market with PPO agents.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    cores = os.cpu_count() or 1

    p = sub.add_parser("train", help="train independent PPO agents")
    p.add_argument("--scenario", required=True)
    p.add_argument("--preset", default="desk", choices=sorted(PRESETS))
    p.add_argument("--config", help="YAML file of training options overriding the preset")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV}/train)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--budget-iters", type=int)
    p.add_argument("--budget-seconds", type=float, help="wall-clock safety cap")
    p.add_argument("--checkpoint-interval", type=int)
    p.add_argument("--workers", type=int, default=cores)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("simulate", help="run frozen policies and record episodes")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scenario", required=True)
    p.add_argument("--episodes", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="records file (default $LTMARKET_OUT/simulate/records.jsonl)")
    p.add_argument("--workers", type=int, default=cores)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", help="summary tables from a records file")
    p.add_argument("--records", required=True)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("league", help="rank checkpoints over random lineups")
    p.add_argument("--checkpoints", nargs="+", required=True)
    p.add_argument("--scenario", required=True)
    p.add_argument("--rounds", type=int, default=20)
    p.add_argument("--episodes-per-lineup", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="league CSV path")
    p.add_argument("--workers", type=int, default=cores)
    p.set_defaults(func=cmd_league)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"error: scenario {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, RecordError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INCOMPATIBLE


if __name__ == "__main__":
    sys.exit(main())
