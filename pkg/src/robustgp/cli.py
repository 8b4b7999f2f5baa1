"""Command line entry point: ``python -m robustgp <command> ...``."""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict

import numpy as np

from . import __version__
from .gggp import decode, evolve, tree_to_dict
from .harness import (
    ExperimentConfig,
    archive_from_json,
    archive_to_json,
    atomic_write,
    component_report,
    csv_with_header,
    evaluate_champion,
    load_heuristic,
    post_process_robust_value,
    provenance,
    rows_to_csv,
    summarize,
)
from .problems import canonical_suite, get_problem
from .swarm import HeuristicConfig, run_heuristic


class ConfigError(Exception):
    pass


def _read_json(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from None


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


@contextmanager
def _mapper(workers: int):
    if workers <= 1:
        yield map
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        yield lambda fn, items: pool.map(fn, items, chunksize=4)


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robustgp", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("problems", help="list the test suite")
    p.add_argument("--dim", type=int, default=30)

    p = sub.add_parser("run", help="run one heuristic on one problem")
    p.add_argument("--problem", required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--budget", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="heuristic config or genome JSON (default: plain rPSO)")
    p.add_argument("--samples", type=int, default=1_000_000, help="post-processing samples")
    p.add_argument("--out", default="runs/run")

    p = sub.add_parser("gp", help="evolve heuristics")
    p.add_argument("--config", help="experiment JSON; flags below override it")
    p.add_argument("--mode", choices=("gp-individual", "gp-general"))
    p.add_argument("--problems", nargs="+")
    p.add_argument("--dim", type=int)
    p.add_argument("--budget", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--population", type=int)
    p.add_argument("--generations", type=int)
    p.add_argument("--replicates", type=int)
    p.add_argument("--fitness-samples", type=int,
                   help="score replicates by this many oracle draws around the returned point (0: search estimate)")
    p.add_argument("--workers", type=int)
    p.add_argument("--out", default="runs/gp")

    p = sub.add_parser("eval", help="evaluate a champion over many runs")
    p.add_argument("--champion", required=True, help="champion, genome or config JSON")
    p.add_argument("--problems", nargs="+", required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--runs", type=int, default=200)
    p.add_argument("--budget", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=1_000_000)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="runs/eval")

    p = sub.add_parser("report", help="component breakdown of a GP archive")
    p.add_argument("--archive", required=True)
    p.add_argument("--budget", type=int, default=2000)
    p.add_argument("--out", default="runs/report")
    return parser


def _cmd_problems(args) -> int:
    print("name,dimension,lower,upper,gamma")
    for p in canonical_suite(args.dim):
        print(f"{p.name},{p.dimension},{p.domain.lower[0]:g},{p.domain.upper[0]:g},{p.gamma:g}")
    return 0


def _cmd_run(args) -> int:
    problem = get_problem(args.problem, args.dim)
    cfg = load_heuristic(_read_json(args.config), args.budget) if args.config else HeuristicConfig()
    search, oracle = np.random.SeedSequence(args.seed).spawn(2)
    result = run_heuristic(cfg, problem, args.budget, search)
    post = post_process_robust_value(result.best_point, problem, args.samples, np.random.default_rng(oracle))
    resolved = dict(problem=problem.name, dimension=args.dim, budget=args.budget, samples=args.samples,
                    heuristic=cfg.to_dict())
    out = provenance(resolved, args.seed)
    out["result"] = dict(best_point=result.best_point.tolist(), best_value=result.best_value,
                         post_processed=post, evaluations=result.evaluations)
    os.makedirs(args.out, exist_ok=True)
    atomic_write(os.path.join(args.out, "result.json"), _dump(out))
    print(f"{problem.name}: search {result.best_value:.6g}, post-processed {post:.6g}")
    return 0


def _experiment_from_args(args) -> ExperimentConfig:
    data = _read_json(args.config) if args.config else {}
    gp = dict(data.get("gp", {}))
    overrides = {"population_size": args.population, "generations": args.generations,
                 "fitness_replicates": args.replicates, "fitness_samples": args.fitness_samples}
    gp.update({k: v for k, v in overrides.items() if v is not None})
    data["gp"] = gp
    for key, value in (("mode", args.mode), ("problems", args.problems), ("dimension", args.dim),
                       ("budget", args.budget), ("seed", args.seed), ("workers", args.workers)):
        if value is not None:
            data[key] = value
    data.setdefault("mode", "gp-individual")
    try:
        exp = ExperimentConfig.from_dict(data)
    except (TypeError, KeyError) as exc:
        raise ConfigError(str(exc)) from None
    if not exp.mode.startswith("gp"):
        raise ConfigError(f"the gp command needs a gp mode, got {exp.mode!r}")
    return exp


def _cmd_gp(args) -> int:
    exp = _experiment_from_args(args)
    problems = exp.problem_instances()
    if exp.mode == "gp-general":
        jobs = [("general", problems)]
    else:
        jobs = [(p.key, [p]) for p in problems]
    meta = provenance(exp.to_dict(), exp.seed)
    os.makedirs(args.out, exist_ok=True)
    atomic_write(os.path.join(args.out, "config.json"), _dump(meta))
    with _mapper(exp.workers) as map_fn:
        for label, group in jobs:
            record = evolve(exp.gp, group, exp.seed, map_fn,
                            progress=lambda g, f, label=label: print(f"[{label}] generation {g}: best {f:.6g}",
                                                                     flush=True))
            target = os.path.join(args.out, label)
            os.makedirs(target, exist_ok=True)
            champion = dict(meta, problems=[p.name for p in group], fitness=record.best_fitness,
                            means=record.best_means, genome=tree_to_dict(record.best_genome),
                            decoded=decode(record.best_genome, exp.budget).to_dict())
            atomic_write(os.path.join(target, "champion.json"), _dump(champion))
            atomic_write(os.path.join(target, "archive.json"),
                         _dump(dict(meta, entries=archive_to_json(record.archive))))
            history = [dict(generation=g, best_fitness=f) for g, f in enumerate(record.best_by_generation)]
            atomic_write(os.path.join(target, "history.csv"), csv_with_header(meta, rows_to_csv(history)))
    return 0


def _cmd_eval(args) -> int:
    data = _read_json(args.champion)
    cfg = load_heuristic(data, args.budget)
    problems = [get_problem(name, args.dim) for name in args.problems]
    resolved = dict(problems=[p.name for p in problems], dimension=args.dim, runs=args.runs,
                    budget=args.budget, samples=args.samples, heuristic=cfg.to_dict())
    meta = provenance(resolved, args.seed)
    with _mapper(args.workers) as map_fn:
        rows = evaluate_champion(cfg, problems, args.runs, args.budget, args.seed, args.samples, map_fn)
    os.makedirs(args.out, exist_ok=True)
    atomic_write(os.path.join(args.out, "samples.csv"),
                 csv_with_header(meta, rows_to_csv([asdict(r) for r in rows])))
    stats = summarize(rows)
    atomic_write(os.path.join(args.out, "summary.csv"), csv_with_header(meta, rows_to_csv(stats)))
    for s in stats:
        print(f"{s['problem']}: mean {s['mean']:.6g}, median {s['median']:.6g}")
    return 0


def _cmd_report(args) -> int:
    data = _read_json(args.archive)
    entries = archive_from_json(data["entries"] if isinstance(data, dict) else data)
    report = component_report(entries, args.budget)
    meta = provenance(dict(archive=os.path.abspath(args.archive), budget=args.budget),
                      data.get("seed") if isinstance(data, dict) else None)
    os.makedirs(args.out, exist_ok=True)
    atomic_write(os.path.join(args.out, "proportions.csv"), csv_with_header(meta, report.proportions_csv()))
    atomic_write(os.path.join(args.out, "deciles.csv"), csv_with_header(meta, report.deciles_csv()))
    print(f"{report.count} genomes summarised into {args.out}")
    return 0


COMMANDS = {"problems": _cmd_problems, "run": _cmd_run, "gp": _cmd_gp, "eval": _cmd_eval,
            "report": _cmd_report}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
