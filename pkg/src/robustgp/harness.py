"""Experiment orchestration: post-processing, champion evaluation, statistics, reports."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from . import __version__
from .gggp import ArchiveEntry, GpConfig, Node, decode, tree_from_dict, tree_to_dict
from .problems import ProblemInstance, get_problem
from .robust_eval import post_process_robust_value, sample_ball
from .swarm import HeuristicConfig, run_heuristic

__all__ = [
    "COMPONENTS",
    "ChampionRow",
    "ExperimentConfig",
    "atomic_write",
    "best_or_equivalent",
    "component_labels",
    "component_report",
    "evaluate_champion",
    "load_heuristic",
    "post_process_robust_value",
    "sample_ball",
    "summarize",
    "wilcoxon_rank_sum",
]

MODES = ("gp-individual", "gp-general", "run-heuristic", "evaluate-champion", "component-report")


# --------------------------------------------------------------------------
# champion evaluation


@dataclass
class ChampionRow:
    problem: str
    run: int
    search_estimate: float
    post_processed: float
    evaluations: int


def _run_seeds(seed: int, problem_index: int, run: int) -> tuple[np.random.SeedSequence, np.random.SeedSequence]:
    """Counter-based split: (master seed, problem index, run index) -> search and oracle streams."""
    ss = np.random.SeedSequence([seed, problem_index, run])
    search, oracle = ss.spawn(2)
    return search, oracle


def _champion_task(task) -> ChampionRow:
    cfg, problem, k, run, budget, seed, samples = task
    search_seed, oracle_seed = _run_seeds(seed, k, run)
    result = run_heuristic(cfg, problem, budget, search_seed)
    post = post_process_robust_value(result.best_point, problem, samples, np.random.default_rng(oracle_seed))
    return ChampionRow(problem.name, run, result.best_value, post, result.evaluations)


def evaluate_champion(cfg: HeuristicConfig, problems: Sequence[ProblemInstance], runs: int = 200,
                      budget: int = 2000, seed: int = 0, samples: int = 1_000_000,
                      map_fn=map) -> list[ChampionRow]:
    """Independent runs per problem, each final point re-estimated by the sampling oracle."""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    tasks = [(cfg, p, k, r, budget, seed, samples) for k, p in enumerate(problems) for r in range(runs)]
    return list(map_fn(_champion_task, tasks))


def summarize(rows: Iterable[ChampionRow]) -> list[dict]:
    """Per-problem box-plot statistics of the post-processed values."""
    by_problem: dict[str, list[float]] = {}
    for row in rows:
        by_problem.setdefault(row.problem, []).append(row.post_processed)
    out = []
    for name, values in by_problem.items():
        v = np.asarray(values)
        q1, median, q3 = np.quantile(v, [0.25, 0.5, 0.75])
        out.append(dict(problem=name, runs=v.size, mean=float(v.mean()), median=float(median),
                        q1=float(q1), q3=float(q3), min=float(v.min()), max=float(v.max()),
                        std=float(v.std(ddof=1)) if v.size > 1 else 0.0))
    return out


# --------------------------------------------------------------------------
# statistics


def wilcoxon_rank_sum(a, b) -> tuple[float, float]:
    """Two-sided rank-sum test; returns (rank sum of ``a``, p-value).

    Normal approximation with average ranks for ties, tie-corrected variance
    and a continuity correction of 0.5.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    n1, n2 = a.size, b.size
    if n1 < 10 or n2 < 10:
        raise ValueError("the normal approximation needs at least 10 samples per group")
    pooled = np.concatenate([a, b])
    ranks = rankdata(pooled)
    w = float(ranks[:n1].sum())
    n = n1 + n2
    _, counts = np.unique(pooled, return_counts=True)
    tie_term = float(np.sum(counts**3 - counts)) / (n * (n - 1))
    var = n1 * n2 / 12.0 * ((n + 1) - tie_term)
    if var <= 0.0:
        return w, 1.0
    mu = n1 * (n + 1) / 2.0
    z = max(0.0, abs(w - mu) - 0.5) / math.sqrt(var)
    return w, min(1.0, math.erfc(z / math.sqrt(2.0)))


def best_or_equivalent(samples: Mapping[str, Sequence[float]], alpha: float = 0.05) -> set[str]:
    """Names whose sample is the best by mean or not significantly different from it.

    Each entry is compared pairwise against the best only; no multiple-comparison
    correction is applied.
    """
    if not samples:
        return set()
    best = min(samples, key=lambda k: float(np.mean(samples[k])))
    marked = {best}
    for name, values in samples.items():
        if name != best and wilcoxon_rank_sum(values, samples[best])[1] >= alpha:
            marked.add(name)
    return marked


# --------------------------------------------------------------------------
# component report

COMPONENTS: dict[str, tuple[str, ...]] = {
    "Form of inner search": ("Random", "PSO", "GA"),
    "Extent of inner search": ("[2-10]", "[11-20]", "[21-30]", "[31-40]", ">40"),
    "Form of baseline rPSO formula": ("Constriction", "Inertia"),
    "Form of movement": ("rPSO", "+DD", "+LEH", "+DD+LEH"),
    "Form of network": ("Global", "Focal", "Ring", "VonNeumann", "Clan", "Cluster", "Hierarchical"),
    "Group (swarm) size": ("[2-10]", "[11-20]", "[21-30]", "[31-40]", ">40"),
    "Inclusion of stopping condition": ("No", "Yes"),
    "Use of existing info. for dormancy": ("No", "Yes", "Not applicable"),
    "Use of existing info. for personal best": ("No", "Yes"),
    "Form of mutation": ("None", "Random", "Gaussian"),
    "Form of relocation due to dormancy": ("LEH", "Random", "Not applicable"),
    "Form of r3 vector": ("Random", "Unity", "Not applicable"),
}


def _size_bin(k: int) -> str:
    for hi, label in ((10, "[2-10]"), (20, "[11-20]"), (30, "[21-30]"), (40, "[31-40]")):
        if k <= hi:
            return label
    return ">40"


def component_labels(tree: Node, budget: int = 2000) -> dict[str, str]:
    """Category of each report component for one genome."""
    cfg = decode(tree, budget)
    n_dorm = tree.child("<Inner>").child("<nDorm>").choice
    return {
        "Form of inner search": cfg.inner.form,
        "Extent of inner search": _size_bin(cfg.inner.extent),
        "Form of baseline rPSO formula": cfg.velocity.baseline,
        "Form of movement": cfg.movement,
        "Form of network": cfg.topology.kind,
        "Group (swarm) size": _size_bin(cfg.group_size),
        "Inclusion of stopping condition": "Yes" if cfg.inner.use_stopping else "No",
        "Use of existing info. for dormancy": n_dorm if cfg.uses_leh else "Not applicable",
        "Use of existing info. for personal best": "Yes" if cfg.inner.use_history_for_pbest else "No",
        "Form of mutation": "Random" if cfg.mutation.kind == "Uniform" else cfg.mutation.kind,
        "Form of relocation due to dormancy": cfg.leh.relocation if cfg.uses_leh else "Not applicable",
        "Form of r3 vector": cfg.dd.r3_mode if cfg.uses_dd else "Not applicable",
    }


def _proportions(labels: list[dict[str, str]]) -> dict[tuple[str, str], float]:
    out = {}
    for comp, cats in COMPONENTS.items():
        for cat in cats:
            hits = sum(1 for lab in labels if lab[comp] == cat)
            out[(comp, cat)] = 100.0 * hits / len(labels)
    return out


@dataclass
class ComponentReport:
    overall: dict[tuple[str, str], float]
    top_third: dict[tuple[str, str], float]
    deciles: list[dict[tuple[str, str], float]]
    decile_sizes: list[int]
    count: int = 0

    def proportions_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["component", "category", "all", "top_third"])
        for (comp, cat), value in self.overall.items():
            w.writerow([comp, cat, f"{value:.4f}", f"{self.top_third[(comp, cat)]:.4f}"])
        return buf.getvalue()

    def deciles_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["component", "category"] + [f"decile_{d + 1}" for d in range(len(self.deciles))])
        for key in self.overall:
            w.writerow(list(key) + [f"{dec[key]:.4f}" for dec in self.deciles])
        return buf.getvalue()


def component_report(archive: Sequence[ArchiveEntry], budget: int = 2000) -> ComponentReport:
    """Category proportions (percent) over all genomes, the top third and each fitness decile.

    Genomes are sorted best to worst (ties keep archive order) and split into
    ten near-equal groups; empty deciles are left out.
    """
    if not archive:
        raise ValueError("archive is empty")
    ordered = sorted(archive, key=lambda e: e.fitness)
    labels = [component_labels(e.genome, budget) for e in ordered]
    top = labels[: math.ceil(len(labels) / 3)]
    groups = [g for g in np.array_split(np.arange(len(labels)), 10) if g.size]
    deciles = [_proportions([labels[i] for i in g]) for g in groups]
    return ComponentReport(_proportions(labels), _proportions(top), deciles,
                           [int(g.size) for g in groups], len(labels))


# --------------------------------------------------------------------------
# configs and persistence


@dataclass
class ExperimentConfig:
    mode: str = "gp-individual"
    problems: list[str] = field(default_factory=lambda: ["sphere"])
    dimension: int = 2
    budget: int = 2000
    seed: int = 0
    gp: GpConfig = field(default_factory=GpConfig)
    runs: int = 200
    samples: int = 1_000_000
    workers: int = 1

    def __post_init__(self) -> None:
        if isinstance(self.gp, dict):
            self.gp = GpConfig(**self.gp)
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if not self.problems:
            raise ValueError("at least one problem is required")
        for name in self.problems:
            get_problem(name, max(1, self.dimension))
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")
        if self.budget < 1 or self.runs < 1 or self.samples < 1 or self.workers < 1:
            raise ValueError("budget, runs, samples and workers must be positive")
        if self.gp.heuristic_budget != self.budget:
            self.gp = GpConfig(**{**asdict(self.gp), "heuristic_budget": self.budget})

    def problem_instances(self) -> list[ProblemInstance]:
        return [get_problem(name, self.dimension) for name in self.problems]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


def load_heuristic(data: dict, budget: int = 2000) -> HeuristicConfig:
    """Accept either a genome tree, a champion record holding one, or a plain config dict."""
    if "genome" in data:
        data = data["genome"]
    if "symbol" in data:
        return decode(tree_from_dict(data), budget)
    return HeuristicConfig.from_dict(data.get("config", data))


def atomic_write(path: str, text: str) -> None:
    """Write ``text`` to ``path`` via a temporary file and rename, so readers never see partial output."""
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def provenance(config: dict, seed: int) -> dict:
    return {"artifact_version": __version__, "seed": seed, "config": config}


def csv_with_header(meta: dict, body: str) -> str:
    """CSV text preceded by a one-line JSON provenance comment."""
    return "# " + json.dumps(meta, sort_keys=True) + "\n" + body


def rows_to_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def archive_to_json(archive: Sequence[ArchiveEntry]) -> list[dict]:
    return [dict(generation=e.generation, index=e.index, fitness=e.fitness, means=e.means,
                 genome=tree_to_dict(e.genome)) for e in archive]


def archive_from_json(data: Sequence[dict]) -> list[ArchiveEntry]:
    return [ArchiveEntry(d["generation"], d["index"], tree_from_dict(d["genome"]), float(d["fitness"]),
                         list(d.get("means", []))) for d in data]
