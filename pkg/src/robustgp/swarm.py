"""Robust particle swarm: the outer minimisation loop and its components."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .dd import DdConfig, dd_velocity_component, descent_direction
from .leh import LehConfig, check_dormancy_and_relocate, initial_velocity
from .problems import BoxDomain, ProblemInstance
from .robust_eval import EvaluationLedger, InnerConfig, appraise

__all__ = [
    "HeuristicConfig",
    "MOVEMENTS",
    "MutationConfig",
    "Particle",
    "RunResult",
    "TOPOLOGIES",
    "Topology",
    "TopologyConfig",
    "VelocityConfig",
    "constriction_coefficient",
    "mutate_position",
    "neighborhood_best",
    "run_heuristic",
    "step_position",
    "step_velocity",
]

TOPOLOGIES = ("Global", "Focal", "Ring", "VonNeumann", "Clan", "Cluster", "Hierarchical")
MOVEMENTS = ("rPSO", "+DD", "+LEH", "+DD+LEH")
MUTATIONS = ("None", "Uniform", "Gaussian")
BASELINES = ("Inertia", "Constriction")


def constriction_coefficient(c1: float, c2: float) -> float:
    phi = c1 + c2
    if phi <= 4.0:
        raise ValueError(f"constriction needs c1 + c2 > 4, got {phi}")
    return 2.0 / abs(2.0 - phi - math.sqrt(phi * phi - 4.0 * phi))


@dataclass(frozen=True)
class VelocityConfig:
    baseline: str = "Inertia"
    c1: float = 1.5
    c2: float = 1.5
    omega: float = 0.7

    def __post_init__(self) -> None:
        if self.baseline not in BASELINES:
            raise ValueError(f"baseline must be one of {BASELINES}")
        if self.c1 < 0 or self.c2 < 0:
            raise ValueError("c1 and c2 must be non-negative")
        if self.baseline == "Constriction":
            constriction_coefficient(self.c1, self.c2)

    @property
    def chi(self) -> float:
        return constriction_coefficient(self.c1, self.c2)


@dataclass(frozen=True)
class TopologyConfig:
    kind: str = "Global"

    def __post_init__(self) -> None:
        if self.kind not in TOPOLOGIES:
            raise ValueError(f"topology must be one of {TOPOLOGIES}")


@dataclass(frozen=True)
class MutationConfig:
    kind: str = "None"
    prob_mutate: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in MUTATIONS:
            raise ValueError(f"mutation must be one of {MUTATIONS}")
        if not 0.0 <= self.prob_mutate <= 0.5:
            raise ValueError("prob_mutate must lie in [0, 0.5]")


@dataclass(frozen=True)
class HeuristicConfig:
    group_size: int = 10
    velocity: VelocityConfig = field(default_factory=VelocityConfig)
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    mutation: MutationConfig = field(default_factory=MutationConfig)
    movement: str = "rPSO"
    dd: DdConfig | None = None
    leh: LehConfig | None = None
    inner: InnerConfig = field(default_factory=InnerConfig)

    def __post_init__(self) -> None:
        if not 2 <= self.group_size <= 50:
            raise ValueError("group_size must lie in [2, 50]")
        if self.movement not in MOVEMENTS:
            raise ValueError(f"movement must be one of {MOVEMENTS}")
        if self.uses_dd and self.dd is None:
            raise ValueError(f"movement {self.movement} needs a dd config")
        if self.uses_leh and self.leh is None:
            raise ValueError(f"movement {self.movement} needs a leh config")

    @property
    def uses_dd(self) -> bool:
        return "DD" in self.movement

    @property
    def uses_leh(self) -> bool:
        return "LEH" in self.movement

    def to_dict(self) -> dict:
        out = asdict(self)
        if not self.uses_dd:
            out["dd"] = None
        if not self.uses_leh:
            out["leh"] = None
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "HeuristicConfig":
        data = dict(data)
        movement = data.get("movement", "rPSO")
        return cls(
            group_size=int(data.get("group_size", 10)),
            velocity=VelocityConfig(**data.get("velocity", {})),
            topology=TopologyConfig(**data.get("topology", {})),
            mutation=MutationConfig(**data.get("mutation", {})),
            movement=movement,
            dd=DdConfig(**data["dd"]) if "DD" in movement and data.get("dd") is not None else (
                DdConfig() if "DD" in movement else None),
            leh=LehConfig(**data["leh"]) if "LEH" in movement and data.get("leh") is not None else (
                LehConfig() if "LEH" in movement else None),
            inner=InnerConfig(**data.get("inner", {})),
        )

    def with_inner(self, **changes) -> "HeuristicConfig":
        return replace(self, inner=replace(self.inner, **changes))


@dataclass
class Particle:
    position: np.ndarray
    velocity: np.ndarray
    pbest_point: np.ndarray
    pbest_value: float = math.inf
    dormancy: int = 0
    direction: np.ndarray | None = None


@dataclass
class RunResult:
    best_point: np.ndarray
    best_value: float
    evaluations: int
    seed: object = None
    iterations: int = 0
    appraisal_evaluations: list[int] = field(default_factory=list)
    post_processed: float | None = None
    ledger: EvaluationLedger | None = None

    @property
    def mean_evaluations_per_appraisal(self) -> float:
        if not self.appraisal_evaluations:
            return math.nan
        return float(np.mean(self.appraisal_evaluations))


# --------------------------------------------------------------------------
# topologies


class Topology:
    """Neighbourhood structure over particle indices; reproducible from (kind, size, rng)."""

    def __init__(self, kind: str, size: int, rng: np.random.Generator):
        if kind not in TOPOLOGIES:
            raise ValueError(f"unknown topology {kind!r}")
        self.kind = kind
        self.size = size
        order = rng.permutation(size)
        self.neighbours: list[np.ndarray] | None = None
        if kind == "Focal":
            self.focal = int(rng.integers(size))
        elif kind == "Ring":
            self.neighbours = self._ring(order)
        elif kind == "VonNeumann":
            self.neighbours = self._von_neumann(order)
        elif kind in ("Clan", "Cluster"):
            groups = max(2, int(math.floor(math.sqrt(size) + 0.5)))
            groups = min(groups, size)
            self.members = [order[g::groups] for g in range(groups)]
            self.group_of = np.empty(size, dtype=int)
            for g, members in enumerate(self.members):
                self.group_of[members] = g
            if kind == "Cluster":
                self.neighbours = self._clusters()
        elif kind == "Hierarchical":
            # binary tree filled breadth-first; node i has parent (i - 1) // 2
            self.at_node = order.copy()
            self.node_of = np.empty(size, dtype=int)
            self.node_of[self.at_node] = np.arange(size)

    @staticmethod
    def _ring(order: np.ndarray) -> list[np.ndarray]:
        n = order.shape[0]
        out: list[np.ndarray] = [None] * n  # type: ignore[list-item]
        for pos, j in enumerate(order):
            out[j] = np.unique([j, order[(pos - 1) % n], order[(pos + 1) % n]])
        return out

    @staticmethod
    def _von_neumann(order: np.ndarray) -> list[np.ndarray]:
        n = order.shape[0]
        cols = int(math.ceil(math.sqrt(n)))
        rows = int(math.ceil(n / cols))
        grid = -np.ones((rows, cols), dtype=int)
        grid.flat[:n] = order
        out: list[np.ndarray] = [None] * n  # type: ignore[list-item]
        for r in range(rows):
            for c in range(cols):
                j = grid[r, c]
                if j < 0:
                    continue
                row_cells = [cc for cc in range(cols) if grid[r, cc] >= 0]
                col_cells = [rr for rr in range(rows) if grid[rr, c] >= 0]
                ci, ri = row_cells.index(c), col_cells.index(r)
                east = grid[r, row_cells[(ci + 1) % len(row_cells)]]
                west = grid[r, row_cells[(ci - 1) % len(row_cells)]]
                south = grid[col_cells[(ri + 1) % len(col_cells)], c]
                north = grid[col_cells[(ri - 1) % len(col_cells)], c]
                out[j] = np.unique([j, north, south, east, west])
        return out

    def _clusters(self) -> list[np.ndarray]:
        k = len(self.members)
        incoming: list[list[int]] = [[] for _ in range(k)]
        for g, members in enumerate(self.members):
            targets = [h for h in range(k) if h != g]
            # one informant per other cluster; small clusters reuse members
            for i, h in enumerate(targets):
                incoming[h].append(int(members[i % len(members)]))
        self.informants = incoming
        out: list[np.ndarray] = [None] * self.size  # type: ignore[list-item]
        for g, members in enumerate(self.members):
            view = np.unique(np.concatenate([members, np.asarray(incoming[g], dtype=int)]))
            for j in members:
                out[j] = view
        return out

    def update(self, values: np.ndarray) -> None:
        """Per-iteration restructuring: child/parent swaps in the hierarchy."""
        if self.kind != "Hierarchical":
            return
        for node in range(1, self.size):
            parent = (node - 1) // 2
            child_j, parent_j = self.at_node[node], self.at_node[parent]
            if values[child_j] < values[parent_j]:
                self.at_node[node], self.at_node[parent] = parent_j, child_j
                self.node_of[child_j], self.node_of[parent_j] = parent, node

    def informer(self, j: int, values: np.ndarray) -> int:
        """Index of the particle whose personal best particle j follows."""
        kind = self.kind
        if kind == "Global":
            return int(np.argmin(values))
        if kind == "Focal":
            return self.focal
        if kind == "Hierarchical":
            node = self.node_of[j]
            return int(self.at_node[(node - 1) // 2]) if node > 0 else j
        if kind == "Clan":
            clan = self.members[self.group_of[j]]
            leader = int(clan[np.argmin(values[clan])])
            if leader != j:
                return leader
            leaders = np.array([m[np.argmin(values[m])] for m in self.members])
            return int(leaders[np.argmin(values[leaders])])
        view = self.neighbours[j]
        return int(view[np.argmin(values[view])])


def neighborhood_best(topology: Topology, particles: list[Particle], j: int) -> np.ndarray:
    values = np.array([p.pbest_value for p in particles])
    return particles[topology.informer(j, values)].pbest_point


# --------------------------------------------------------------------------
# movement


def step_velocity(p: Particle, cfg: VelocityConfig, nbest: np.ndarray, rng: np.random.Generator,
                  dd: np.ndarray | None = None, c3: float = 0.0, r3_mode: str = "Random") -> np.ndarray:
    n = p.position.shape[0]
    r1, r2 = rng.random(n), rng.random(n)
    social = cfg.c1 * r1 * (p.pbest_point - p.position) + cfg.c2 * r2 * (nbest - p.position)
    if dd is not None:
        social = social + dd_velocity_component(dd, c3, r3_mode, rng)
    if cfg.baseline == "Inertia":
        return cfg.omega * p.velocity + social
    return cfg.chi * (p.velocity + social)


def step_position(p: Particle) -> np.ndarray:
    return p.position + p.velocity


def mutate_position(x: np.ndarray, cfg: MutationConfig, domain: BoxDomain,
                    rng: np.random.Generator) -> np.ndarray:
    """Particle-level mutation; each dimension flips with probability q ~ U(0, 1/n)."""
    if cfg.kind == "None" or cfg.prob_mutate <= 0.0 or rng.random() >= cfg.prob_mutate:
        return x
    n = x.shape[0]
    q = rng.random() / n
    mask = rng.random(n) < q
    if not mask.any():
        return x
    if cfg.kind == "Uniform":
        return np.where(mask, domain.lower + rng.random(n) * domain.width, x)
    return x + mask * rng.normal(0.0, 1.0, n) * (0.1 * domain.width)


# --------------------------------------------------------------------------
# main loop


def _rng_streams(seed) -> tuple[np.random.Generator, ...]:
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return tuple(np.random.default_rng(s) for s in ss.spawn(3))


def run_heuristic(cfg: HeuristicConfig, problem: ProblemInstance, budget: int = 2000, seed=0,
                  keep_ledger: bool = False, max_stall_iterations: int = 200) -> RunResult:
    """Run one robust PSO until the evaluation budget is spent.

    The loop also ends after ``max_stall_iterations`` consecutive iterations in
    which no particle evaluated anything (e.g. the whole swarm has left the box).
    """
    rng, inner_rng, leh_rng = _rng_streams(seed)
    domain, gamma, n = problem.domain, problem.gamma, problem.dimension
    ledger = EvaluationLedger(problem, budget)
    size = cfg.group_size
    particles = []
    for _ in range(size):
        x = domain.sample(rng)
        particles.append(Particle(x, initial_velocity(n, rng), x.copy()))
    topology = Topology(cfg.topology.kind, size, rng)
    values = np.full(size, math.inf)
    per_appraisal: list[int] = []
    dd_cfg = cfg.dd if cfg.uses_dd else None
    leh_cfg = cfg.leh if cfg.uses_leh else None

    t = 0
    stall = 0
    with np.errstate(over="ignore", invalid="ignore"):
        while not ledger.exhausted and stall < max_stall_iterations:
            spent_before = ledger.total_spent
            if t > 0:
                topology.update(values)
            for j, p in enumerate(particles):
                if ledger.exhausted:
                    break
                if t > 0:
                    nbest = particles[topology.informer(j, values)].pbest_point
                    if dd_cfg is not None and p.direction is not None:
                        p.velocity = step_velocity(p, cfg.velocity, nbest, rng, p.direction,
                                                   dd_cfg.c3, dd_cfg.r3_mode)
                    else:
                        p.velocity = step_velocity(p, cfg.velocity, nbest, rng)
                    p.position = step_position(p)
                    if leh_cfg is not None:
                        check_dormancy_and_relocate(p, leh_cfg, float(values.min()), ledger,
                                                    domain, gamma, leh_rng)
                    p.position = mutate_position(p.position, cfg.mutation, domain, rng)
                if not domain.contains(p.position):
                    p.dormancy += 1
                    p.direction = None
                    continue
                a = appraise(p.position, cfg.inner, gamma, p.pbest_value, ledger, inner_rng)
                if a.budget_exhausted and np.isfinite(values).any():
                    # truncated search is not a valid appraisal; the run ends here
                    break
                per_appraisal.append(a.evaluations_used)
                p.dormancy = 0 if a.evaluations_used else p.dormancy + 1
                if a.estimate < p.pbest_value:
                    p.pbest_value = a.estimate
                    p.pbest_point = p.position.copy()
                    values[j] = a.estimate
                if dd_cfg is not None:
                    p.direction = descent_direction(p.position, a.estimate, dd_cfg, gamma, ledger)
            stall = stall + 1 if ledger.total_spent == spent_before else 0
            t += 1

    best = int(np.argmin(values))
    return RunResult(
        best_point=particles[best].pbest_point.copy(),
        best_value=float(values[best]),
        evaluations=ledger.total_spent,
        seed=seed,
        iterations=t,
        appraisal_evaluations=per_appraisal,
        ledger=ledger if keep_ledger else None,
    )
