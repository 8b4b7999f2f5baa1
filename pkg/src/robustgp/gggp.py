"""Grammar-guided genetic programming over robust PSO heuristics.

A genome is a derivation tree of :data:`GRAMMAR`. Every tree shares the same
high-level skeleton, so crossover and mutation act at a fixed set of cut
points (:data:`CUT_SYMBOLS`) and always yield a valid tree.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from .dd import DdConfig
from .leh import LehConfig
from .problems import ProblemInstance
from .robust_eval import InnerConfig, post_process_robust_value
from .swarm import HeuristicConfig, MutationConfig, TopologyConfig, VelocityConfig, run_heuristic

__all__ = [
    "CUT_SYMBOLS",
    "GRAMMAR",
    "ArchiveEntry",
    "Choice",
    "FitnessRecord",
    "GpConfig",
    "GpRunRecord",
    "IntRange",
    "Node",
    "RealRange",
    "Seq",
    "crossover",
    "decode",
    "elimination_ranking",
    "evolve",
    "fitness_multi",
    "fitness_single",
    "genome_key",
    "inner_extent",
    "mutate_genome",
    "random_genome",
    "tree_from_dict",
    "tree_to_dict",
]


# --------------------------------------------------------------------------
# grammar as data


@dataclass(frozen=True)
class Seq:
    children: tuple[str, ...]


@dataclass(frozen=True)
class Choice:
    options: tuple[tuple[str, tuple[str, ...]], ...]

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(label for label, _ in self.options)

    def children_of(self, label: str) -> tuple[str, ...]:
        return dict(self.options)[label]


@dataclass(frozen=True)
class RealRange:
    low: float
    high: float


@dataclass(frozen=True)
class IntRange:
    low: int
    high: int


Rule = Seq | Choice | RealRange | IntRange


def _flags(*labels: str) -> Choice:
    return Choice(tuple((label, ()) for label in labels))


GRAMMAR: dict[str, Rule] = {
    "<Start>": Seq(("<Outer>", "<Inner>")),
    "<Outer>": Seq(("<Group>", "<Mutation>", "<Network>", "<Capability>")),
    "<Group>": IntRange(2, 50),
    "<Mutation>": Seq(("<Mutate>", "<Prob Mutate>")),
    "<Mutate>": _flags("None", "Uniform", "Gaussian"),
    "<Prob Mutate>": RealRange(0.0, 0.5),
    "<Network>": _flags("Global", "Focal", "Ring", "VonNeumann", "Clan", "Cluster", "Hierarchical"),
    "<Capability>": Seq(("<Baseline>", "<Movement>")),
    "<Baseline>": Choice((("Inertia", ("<C1>", "<C2>", "<ω>")),
                          ("Constriction", ("<C1>", "<C2>")))),
    "<C1>": RealRange(0.0, 4.0),
    "<C2>": RealRange(0.0, 4.0),
    "<ω>": RealRange(0.0, 1.0),
    "<Movement>": Choice((("rPSO", ()), ("+DD", ("<DD>",)), ("+LEH", ("<LEH>",)),
                          ("+DD+LEH", ("<DD>", "<LEH>")))),
    "<DD>": Seq(("<C3>", "<σ>", "<σ limit>", "<Min step>", "<r3>")),
    "<C3>": RealRange(0.0, 4.0),
    "<σ>": RealRange(0.0, 10.0),
    # fraction of sigma
    "<σ limit>": RealRange(0.0, 1.0),
    # fraction of gamma
    "<Min step>": RealRange(0.0, 1.0),
    "<r3>": _flags("Random", "Unity"),
    "<LEH>": Choice((("LEH", ("<LEH relocation>", "<Dorm>")), ("Random", ("<Dorm>",)))),
    "<LEH relocation>": Seq(("<lpop>", "<lmutP>", "<lmutA>", "<lelites>", "<ltour>")),
    "<lpop>": IntRange(10, 50),
    "<lmutP>": RealRange(0.0, 1.0),
    "<lmutA>": RealRange(0.0, 0.5),
    "<lelites>": RealRange(0.0, 1.0),
    "<ltour>": RealRange(0.0, 1.0),
    "<Dorm>": IntRange(2, 10),
    "<Inner>": Seq(("<In Ext>", "<Form Inner>", "<nDorm>", "<nPBest>", "<Stopping>")),
    "<In Ext>": RealRange(0.0, 1.0),
    "<Form Inner>": Choice((("Random", ()), ("PSO", ("<In PSO>",)), ("GA", ("<In GA>",)))),
    "<In PSO>": Seq(("<In Swarm>", "<In C1>", "<In C2>", "<In ω>")),
    "<In Swarm>": RealRange(0.0, 1.0),
    "<In C1>": RealRange(0.0, 4.0),
    "<In C2>": RealRange(0.0, 4.0),
    "<In ω>": RealRange(0.0, 1.0),
    "<In GA>": Seq(("<In pop>", "<In mutP>", "<In mutA>", "<In elites>", "<In tour>")),
    "<In pop>": RealRange(0.0, 1.0),
    "<In mutP>": RealRange(0.0, 1.0),
    "<In mutA>": RealRange(0.0, 0.5),
    "<In elites>": RealRange(0.0, 1.0),
    "<In tour>": RealRange(0.0, 1.0),
    "<nDorm>": _flags("Yes", "No"),
    "<nPBest>": _flags("Yes", "No"),
    "<Stopping>": _flags("Yes", "No"),
}

CUT_SYMBOLS: tuple[str, ...] = (
    "<Group>", "<Mutation>", "<Network>", "<Capability>", "<Baseline>", "<Movement>",
    "<In Ext>", "<Form Inner>", "<nDorm>", "<nPBest>", "<Stopping>",
)


@dataclass
class Node:
    symbol: str
    choice: str | None = None
    value: float | int | None = None
    children: list["Node"] = field(default_factory=list)

    def find(self, symbol: str) -> "Node | None":
        if self.symbol == symbol:
            return self
        for child in self.children:
            found = child.find(symbol)
            if found is not None:
                return found
        return None

    def child(self, symbol: str) -> "Node":
        for c in self.children:
            if c.symbol == symbol:
                return c
        raise KeyError(f"{self.symbol} has no child {symbol}")

    def leaves(self) -> Iterable["Node"]:
        if not self.children:
            yield self
        for c in self.children:
            yield from c.leaves()


def _constriction_ok(node: Node) -> bool:
    if node.choice != "Constriction":
        return True
    return node.child("<C1>").value + node.child("<C2>").value > 4.0


# symbol -> predicate on a freshly expanded node; children are redrawn until it holds
CONSTRAINTS: dict[str, Callable[[Node], bool]] = {"<Baseline>": _constriction_ok}


def expand(symbol: str, rng: np.random.Generator, grammar: dict[str, Rule] = GRAMMAR) -> Node:
    """Random leftmost depth-first derivation of ``symbol``."""
    rule = grammar[symbol]
    if isinstance(rule, RealRange):
        return Node(symbol, value=float(rng.uniform(rule.low, rule.high)))
    if isinstance(rule, IntRange):
        return Node(symbol, value=int(rng.integers(rule.low, rule.high + 1)))
    node = Node(symbol)
    if isinstance(rule, Choice):
        node.choice = rule.labels[int(rng.integers(len(rule.options)))]
        children = rule.children_of(node.choice)
    else:
        children = rule.children
    check = CONSTRAINTS.get(symbol)
    while True:
        node.children = [expand(c, rng, grammar) for c in children]
        if check is None or check(node):
            return node


def random_genome(rng: np.random.Generator, grammar: dict[str, Rule] = GRAMMAR) -> Node:
    return expand("<Start>", rng, grammar)


def validate(tree: Node, grammar: dict[str, Rule] = GRAMMAR) -> None:
    """Raise ValueError unless ``tree`` is a complete derivation of the grammar."""
    rule = grammar.get(tree.symbol)
    if rule is None:
        raise ValueError(f"unknown symbol {tree.symbol}")
    if isinstance(rule, (RealRange, IntRange)):
        if tree.children or tree.value is None or not rule.low <= tree.value <= rule.high:
            raise ValueError(f"bad leaf {tree.symbol}={tree.value}")
        if isinstance(rule, IntRange) and int(tree.value) != tree.value:
            raise ValueError(f"{tree.symbol} must be an integer")
        return
    if isinstance(rule, Choice):
        if tree.choice not in rule.labels:
            raise ValueError(f"bad choice {tree.choice!r} at {tree.symbol}")
        expected = rule.children_of(tree.choice)
    else:
        expected = rule.children
    if tuple(c.symbol for c in tree.children) != expected:
        raise ValueError(f"children of {tree.symbol} do not match the grammar")
    check = CONSTRAINTS.get(tree.symbol)
    if check is not None and not check(tree):
        raise ValueError(f"constraint violated at {tree.symbol}")
    for c in tree.children:
        validate(c, grammar)


# --------------------------------------------------------------------------
# serialisation


def tree_to_dict(tree: Node) -> dict:
    out: dict = {"symbol": tree.symbol}
    if tree.choice is not None:
        out["choice"] = tree.choice
    if tree.value is not None:
        out["value"] = tree.value
    if tree.children:
        out["children"] = [tree_to_dict(c) for c in tree.children]
    return out


def tree_from_dict(data: dict) -> Node:
    return Node(data["symbol"], data.get("choice"), data.get("value"),
                [tree_from_dict(c) for c in data.get("children", [])])


def genome_key(tree: Node) -> str:
    return json.dumps(tree_to_dict(tree), sort_keys=True, separators=(",", ":"))


# --------------------------------------------------------------------------
# variation


def crossover(parent1: Node, parent2: Node, rng: np.random.Generator, cut: str | None = None) -> Node:
    """Parent2 above the cut, parent1's subtree below it."""
    if cut is None:
        cut = CUT_SYMBOLS[int(rng.integers(len(CUT_SYMBOLS)))]
    child = copy.deepcopy(parent2)
    _replace(child, cut, copy.deepcopy(parent1.find(cut)))
    return child


def mutate_genome(tree: Node, mutation_probability: float, rng: np.random.Generator,
                  cut: str | None = None, grammar: dict[str, Rule] = GRAMMAR) -> Node:
    if rng.random() >= mutation_probability:
        return tree
    if cut is None:
        cut = CUT_SYMBOLS[int(rng.integers(len(CUT_SYMBOLS)))]
    child = copy.deepcopy(tree)
    _replace(child, cut, expand(cut, rng, grammar))
    return child


def _replace(tree: Node, symbol: str, subtree: Node) -> None:
    stack = [tree]
    while stack:
        node = stack.pop()
        for i, c in enumerate(node.children):
            if c.symbol == symbol:
                node.children[i] = subtree
                return
            stack.append(c)
    raise KeyError(f"cut symbol {symbol} not found")


# --------------------------------------------------------------------------
# decoding


def _round(x: float) -> int:
    return int(math.floor(x + 0.5))


def inner_extent(frac: float, group_size: int, budget: int) -> int:
    """Points per inner search; the constant 20 is the number of outer iterations aimed for."""
    return max(2, _round(frac * budget / (20 * group_size)))


def _scaled_size(frac: float, total: int) -> int:
    return min(total, max(2, _round(frac * total)))


def _elites(frac: float, pop: int) -> int:
    return min(pop - 1, int(math.floor(frac * pop)))


def _tour(frac: float, pop: int) -> int:
    return min(pop, max(1, int(math.ceil(frac * pop))))


def decode(tree: Node, budget: int = 2000) -> HeuristicConfig:
    """Read a HeuristicConfig off the leaves of a derivation tree."""
    outer, inner = tree.child("<Outer>"), tree.child("<Inner>")
    group = int(outer.child("<Group>").value)

    mut = outer.child("<Mutation>")
    mutation = MutationConfig(mut.child("<Mutate>").choice, float(mut.child("<Prob Mutate>").value))
    topology = TopologyConfig(outer.child("<Network>").choice)

    cap = outer.child("<Capability>")
    base = cap.child("<Baseline>")
    velocity = VelocityConfig(
        baseline=base.choice,
        c1=float(base.child("<C1>").value),
        c2=float(base.child("<C2>").value),
        omega=float(base.child("<ω>").value) if base.choice == "Inertia" else 1.0,
    )

    move = cap.child("<Movement>")
    dd = leh = None
    if "DD" in move.choice:
        node = move.child("<DD>")
        sigma = float(node.child("<σ>").value)
        dd = DdConfig(
            c3=float(node.child("<C3>").value),
            sigma=sigma,
            sigma_limit=float(node.child("<σ limit>").value) * sigma,
            min_step_frac=float(node.child("<Min step>").value),
            r3_mode=node.child("<r3>").choice,
        )
    if "LEH" in move.choice:
        node = move.child("<LEH>")
        dorm = int(node.child("<Dorm>").value)
        if node.choice == "LEH":
            rel = node.child("<LEH relocation>")
            lpop = int(rel.child("<lpop>").value)
            leh = LehConfig(
                relocation="LEH",
                dorm_threshold=dorm,
                lpop=lpop,
                lmutp=float(rel.child("<lmutP>").value),
                lmuta=float(rel.child("<lmutA>").value),
                lelites=_elites(float(rel.child("<lelites>").value), lpop),
                ltour=_tour(float(rel.child("<ltour>").value), lpop),
            )
        else:
            leh = LehConfig(relocation="Random", dorm_threshold=dorm)

    extent = inner_extent(float(inner.child("<In Ext>").value), group, budget)
    form = inner.child("<Form Inner>")
    params: dict = {}
    if form.choice == "PSO":
        node = form.child("<In PSO>")
        params = dict(
            in_swarm=_scaled_size(float(node.child("<In Swarm>").value), extent),
            in_c1=float(node.child("<In C1>").value),
            in_c2=float(node.child("<In C2>").value),
            in_omega=float(node.child("<In ω>").value),
        )
    elif form.choice == "GA":
        node = form.child("<In GA>")
        pop = _scaled_size(float(node.child("<In pop>").value), extent)
        params = dict(
            in_pop=pop,
            in_mutp=float(node.child("<In mutP>").value),
            in_muta=float(node.child("<In mutA>").value),
            in_elites=_elites(float(node.child("<In elites>").value), pop),
            in_tour=_tour(float(node.child("<In tour>").value), pop),
        )
    inner_cfg = InnerConfig(
        form=form.choice,
        extent=extent,
        use_stopping=inner.child("<Stopping>").choice == "Yes",
        # history-based dormancy only matters when dormant particles are relocated
        use_history_for_dormancy=inner.child("<nDorm>").choice == "Yes" and leh is not None,
        use_history_for_pbest=inner.child("<nPBest>").choice == "Yes",
        **params,
    )
    return HeuristicConfig(group, velocity, topology, mutation, move.choice, dd, leh, inner_cfg)


# --------------------------------------------------------------------------
# fitness


@dataclass(frozen=True)
class GpConfig:
    population_size: int = 40
    generations: int = 25
    tournament_size: int = 3
    elites: int = 2
    crossover_rate: float = 1.0
    mutation_probability: float = 0.2
    fitness_replicates: int = 20
    heuristic_budget: int = 2000
    # 0 scores a replicate by its own search estimate; k > 0 re-scores the returned
    # point with k unbudgeted uniform draws in its uncertainty ball
    fitness_samples: int = 0

    def __post_init__(self) -> None:
        if self.population_size < 1:
            raise ValueError("population_size must be >= 1")
        if not 0 <= self.elites <= self.population_size:
            raise ValueError("elites must lie in [0, population_size]")
        if self.fitness_replicates < 1:
            raise ValueError("fitness_replicates must be >= 1")
        if not 1 <= self.tournament_size <= self.population_size:
            raise ValueError("tournament_size must lie in [1, population_size]")
        if self.fitness_samples < 0:
            raise ValueError("fitness_samples must be >= 0")


@dataclass
class FitnessRecord:
    means: list[float]
    fitness: float


def replicate_seeds(master_seed: int, key: str, problem_index: int, replicates: int) -> list[np.random.SeedSequence]:
    """Seeds depend only on (master seed, genome, problem), so re-evaluation is reproducible."""
    digest = int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "little")
    return np.random.SeedSequence([master_seed, digest, problem_index]).spawn(replicates)


def _run_task(task) -> float:
    cfg, problem, budget, seed, samples = task
    if samples == 0:
        return run_heuristic(cfg, problem, budget, seed).best_value
    search, oracle = seed.spawn(2)
    result = run_heuristic(cfg, problem, budget, search)
    return post_process_robust_value(result.best_point, problem, samples, np.random.default_rng(oracle))


def _replicate_means(trees: Sequence[Node], problems: Sequence[ProblemInstance], gp_cfg: GpConfig,
                     master_seed: int, map_fn=map) -> list[list[float]]:
    tasks, shape = [], []
    for tree in trees:
        cfg = decode(tree, gp_cfg.heuristic_budget)
        key = genome_key(tree)
        for k, problem in enumerate(problems):
            for seed in replicate_seeds(master_seed, key, k, gp_cfg.fitness_replicates):
                tasks.append((cfg, problem, gp_cfg.heuristic_budget, seed, gp_cfg.fitness_samples))
    values = np.fromiter(map_fn(_run_task, tasks), dtype=float, count=len(tasks))
    values = values.reshape(len(trees), len(problems), gp_cfg.fitness_replicates)
    return values.mean(axis=2).tolist()


def fitness_single(tree: Node, problem: ProblemInstance, gp_cfg: GpConfig, master_seed: int = 0,
                   map_fn=map) -> FitnessRecord:
    means = _replicate_means([tree], [problem], gp_cfg, master_seed, map_fn)[0]
    return FitnessRecord(means, means[0])


def fitness_multi(trees: Sequence[Node], problems: Sequence[ProblemInstance], gp_cfg: GpConfig,
                  master_seed: int = 0, map_fn=map) -> list[FitnessRecord]:
    """Elimination-rank fitness of a population on several problems (0 is best)."""
    means = _replicate_means(trees, problems, gp_cfg, master_seed, map_fn)
    order = elimination_ranking(np.array(means))
    position = np.empty(len(trees), dtype=int)
    position[order] = np.arange(len(trees))
    return [FitnessRecord(m, float(p)) for m, p in zip(means, position)]


def elimination_ranking(scores) -> list[int]:
    """Best-to-worst order of heuristics (rows) scored on problems (columns); lower is better.

    The heuristic with the worst combined rank is removed repeatedly and
    ranks are recomputed among those left. Ties go to the larger mean score,
    then to the larger index.
    """
    scores = np.asarray(scores, dtype=float)
    if scores.ndim != 2:
        raise ValueError("scores must be a heuristics x problems matrix")
    remaining = list(range(scores.shape[0]))
    removed: list[int] = []
    while remaining:
        sub = scores[remaining]
        # rank sums are exact multiples of 0.5, so comparisons need no tolerance
        rank_sum = rankdata(sub, axis=0).sum(axis=1)
        mean_score = sub.mean(axis=1)
        worst = max(range(len(remaining)), key=lambda k: (rank_sum[k], mean_score[k], remaining[k]))
        removed.append(remaining.pop(worst))
    return removed[::-1]


# --------------------------------------------------------------------------
# evolution


@dataclass
class ArchiveEntry:
    generation: int
    index: int
    genome: Node
    fitness: float
    means: list[float]


@dataclass
class GpRunRecord:
    best_genome: Node
    best_fitness: float
    best_means: list[float]
    archive: list[ArchiveEntry]
    best_by_generation: list[float] = field(default_factory=list)


def _tournament_select(fitness: np.ndarray, size: int, rng: np.random.Generator) -> int:
    entrants = rng.choice(fitness.shape[0], size=size, replace=False)
    return int(entrants[np.argmin(fitness[entrants])])


def evolve(gp_cfg: GpConfig, problems: Sequence[ProblemInstance], seed: int = 0, map_fn=map,
           progress: Callable[[int, float], None] | None = None) -> GpRunRecord:
    if not problems:
        raise ValueError("need at least one problem")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x6767]))
    population = [random_genome(rng) for _ in range(gp_cfg.population_size)]
    cache: dict[str, list[float]] = {}
    archive: list[ArchiveEntry] = []
    best_by_generation: list[float] = []

    for gen in range(gp_cfg.generations + 1):
        keys = [genome_key(t) for t in population]
        fresh, fresh_keys = [], []
        for tree, key in zip(population, keys):
            if key not in cache and key not in fresh_keys:
                fresh.append(tree)
                fresh_keys.append(key)
        if fresh:
            for key, means in zip(fresh_keys, _replicate_means(fresh, problems, gp_cfg, seed, map_fn)):
                cache[key] = means
        means = [cache[k] for k in keys]
        if len(problems) == 1:
            fitness = np.array([m[0] for m in means])
        else:
            order = elimination_ranking(np.array(means))
            fitness = np.empty(len(population))
            fitness[order] = np.arange(len(population), dtype=float)
        for i, tree in enumerate(population):
            archive.append(ArchiveEntry(gen, i, tree, float(fitness[i]), list(means[i])))
        best = int(np.argmin(fitness))
        best_by_generation.append(float(fitness[best]))
        if progress is not None:
            progress(gen, float(fitness[best]))
        if gen == gp_cfg.generations:
            return GpRunRecord(population[best], float(fitness[best]), list(means[best]),
                               archive, best_by_generation)

        ranked = np.argsort(fitness, kind="stable")
        next_pop = [population[i] for i in ranked[: gp_cfg.elites]]
        while len(next_pop) < gp_cfg.population_size:
            a = population[_tournament_select(fitness, gp_cfg.tournament_size, rng)]
            b = population[_tournament_select(fitness, gp_cfg.tournament_size, rng)]
            child = crossover(a, b, rng) if rng.random() < gp_cfg.crossover_rate else copy.deepcopy(a)
            next_pop.append(mutate_genome(child, gp_cfg.mutation_probability, rng))
        population = next_pop
    raise AssertionError("unreachable")
