"""Budgeted worst-case appraisal of candidate points.

The :class:`EvaluationLedger` is the only path to the nominal objective during
a search: it charges one unit of budget per call and keeps the full history of
evaluated points, which the stopping condition, the history-based personal
best supplement and the descent-direction / hypersphere machinery all read.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .problems import ProblemInstance, nominal_eval, nominal_eval_batch

__all__ = [
    "BudgetExhausted",
    "EvaluationLedger",
    "InnerConfig",
    "RobustAppraisal",
    "UncertaintySpec",
    "appraise",
    "inner_ga",
    "inner_pso",
    "inner_random",
    "post_process_robust_value",
    "project_to_ball",
    "sample_ball",
    "sample_in_ball",
]

INNER_FORMS = ("Random", "PSO", "GA")


class BudgetExhausted(RuntimeError):
    pass


class EvaluationLedger:
    """Budget counter plus the append-only history set of evaluated points."""

    def __init__(self, problem: ProblemInstance, budget: int):
        if budget < 0:
            raise ValueError("budget must be non-negative")
        self.problem = problem
        self.initial_budget = int(budget)
        self._points = np.empty((self.initial_budget, problem.dimension))
        self._values = np.empty(self.initial_budget)
        self.total_spent = 0

    @property
    def budget_remaining(self) -> int:
        return self.initial_budget - self.total_spent

    @property
    def exhausted(self) -> bool:
        return self.total_spent >= self.initial_budget

    @property
    def points(self) -> np.ndarray:
        return self._points[: self.total_spent]

    @property
    def values(self) -> np.ndarray:
        return self._values[: self.total_spent]

    def __len__(self) -> int:
        return self.total_spent

    def evaluate(self, x: np.ndarray) -> float:
        if self.exhausted:
            raise BudgetExhausted("no function evaluations left")
        value = nominal_eval(self.problem, x)
        k = self.total_spent
        self._points[k] = x
        self._values[k] = value
        self.total_spent = k + 1
        return value

    def within(self, x: np.ndarray, radius: float) -> np.ndarray:
        """Indices of history points at Euclidean distance <= radius from x."""
        if self.total_spent == 0:
            return np.empty(0, dtype=int)
        d2 = np.sum((self.points - x) ** 2, axis=1)
        return np.flatnonzero(d2 <= radius * radius)

    def worst_within(self, x: np.ndarray, radius: float) -> float:
        idx = self.within(x, radius)
        return float(self._values[idx].max()) if idx.size else -math.inf


@dataclass(frozen=True)
class UncertaintySpec:
    gamma: float
    norm: str = "euclidean"

    def __post_init__(self) -> None:
        if not self.gamma > 0:
            raise ValueError("gamma must be > 0")
        if self.norm != "euclidean":
            raise ValueError("only the Euclidean norm is supported")


@dataclass(frozen=True)
class InnerConfig:
    form: str = "Random"
    extent: int = 5
    use_stopping: bool = False
    use_history_for_dormancy: bool = False
    use_history_for_pbest: bool = False
    # inner PSO: swarm size, c1, c2, omega
    in_swarm: int = 2
    in_c1: float = 1.5
    in_c2: float = 1.5
    in_omega: float = 0.7
    # inner GA: population, mutation probability, mutation scale (fraction of gamma), elites, tournament
    in_pop: int = 2
    in_mutp: float = 0.2
    in_muta: float = 0.2
    in_elites: int = 1
    in_tour: int = 2

    def __post_init__(self) -> None:
        if self.form not in INNER_FORMS:
            raise ValueError(f"inner form must be one of {INNER_FORMS}, got {self.form!r}")
        if self.extent < 2:
            raise ValueError("inner extent must be >= 2")
        if self.form == "PSO" and not 1 <= self.in_swarm <= self.extent:
            raise ValueError("inner swarm size must lie in [1, extent]")
        if self.form == "GA":
            if not 2 <= self.in_pop <= self.extent:
                raise ValueError("inner GA population must lie in [2, extent]")
            if not 0 <= self.in_elites < self.in_pop:
                raise ValueError("inner GA elites must lie in [0, population)")
            if not 1 <= self.in_tour <= self.in_pop:
                raise ValueError("inner GA tournament size must lie in [1, population]")


@dataclass
class RobustAppraisal:
    estimate: float
    evaluations_used: int = 0
    terminated_early: bool = False
    dormant_skip: bool = False
    budget_exhausted: bool = False
    worst_point: np.ndarray | None = None


def sample_in_ball(center: np.ndarray, gamma: float, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw from the closed Euclidean ball of radius gamma around center."""
    if not gamma > 0:
        raise ValueError("gamma must be > 0")
    center = np.asarray(center, dtype=float)
    n = center.shape[0]
    direction = rng.standard_normal(n)
    norm = np.linalg.norm(direction)
    while norm == 0.0:
        direction = rng.standard_normal(n)
        norm = np.linalg.norm(direction)
    radius = gamma * rng.random() ** (1.0 / n)
    return center + (radius / norm) * direction


def project_to_ball(q: np.ndarray, center: np.ndarray, gamma: float) -> np.ndarray:
    offset = q - center
    dist = np.linalg.norm(offset)
    if dist <= gamma:
        return q
    return center + offset * (gamma / dist)


class _Search:
    """Shared bookkeeping for one inner maximisation over N(x)."""

    def __init__(self, x, extent, ledger, threshold, use_stopping):
        self.x = x
        self.extent = extent
        self.ledger = ledger
        self.threshold = threshold if use_stopping else None
        self.used = 0
        self.best = -math.inf
        self.best_point: np.ndarray | None = None
        self.stopped = False
        self.out_of_budget = False

    @property
    def done(self) -> bool:
        return self.stopped or self.out_of_budget or self.used >= self.extent

    def evaluate(self, q: np.ndarray) -> float:
        if self.ledger.exhausted:
            self.out_of_budget = True
            return -math.inf
        value = self.ledger.evaluate(q)
        self.used += 1
        if value > self.best:
            self.best, self.best_point = value, q.copy()
        if self.threshold is not None and value > self.threshold:
            self.stopped = True
        if self.ledger.exhausted and not self.done:
            self.out_of_budget = True
        return value

    def result(self) -> RobustAppraisal:
        return RobustAppraisal(
            estimate=self.best,
            evaluations_used=self.used,
            terminated_early=self.stopped,
            budget_exhausted=self.out_of_budget,
            worst_point=self.best_point,
        )


def inner_random(x, extent, gamma, ledger, rng, threshold=None, use_stopping=False):
    search = _Search(x, extent, ledger, threshold, use_stopping)
    while not search.done:
        search.evaluate(sample_in_ball(x, gamma, rng))
    return search.result()


def inner_pso(x, cfg: InnerConfig, gamma, ledger, rng, threshold=None, use_stopping=None):
    """Inertia PSO maximising f over the gamma-ball; extent counts evaluations."""
    if use_stopping is None:
        use_stopping = cfg.use_stopping
    search = _Search(x, cfg.extent, ledger, threshold, use_stopping)
    n = x.shape[0]
    size = max(1, min(cfg.in_swarm, cfg.extent))
    pos = np.array([sample_in_ball(x, gamma, rng) for _ in range(size)])
    vel = rng.random((size, n)) * (0.1 * gamma)
    pbest = pos.copy()
    pval = np.full(size, -math.inf)
    for j in range(size):
        if search.done:
            return search.result()
        pval[j] = search.evaluate(pos[j])
    while not search.done:
        for j in range(size):
            if search.done:
                break
            lead = pbest[int(np.argmax(pval))]
            r1, r2 = rng.random(n), rng.random(n)
            vel[j] = (cfg.in_omega * vel[j] + cfg.in_c1 * r1 * (pbest[j] - pos[j])
                      + cfg.in_c2 * r2 * (lead - pos[j]))
            pos[j] = project_to_ball(pos[j] + vel[j], x, gamma)
            value = search.evaluate(pos[j])
            if value > pval[j]:
                pval[j], pbest[j] = value, pos[j].copy()
    return search.result()


def _tournament(values: np.ndarray, size: int, rng: np.random.Generator) -> int:
    entrants = rng.choice(values.shape[0], size=size, replace=False)
    return int(entrants[np.argmax(values[entrants])])


def inner_ga(x, cfg: InnerConfig, gamma, ledger, rng, threshold=None, use_stopping=None):
    """Real-coded GA maximising f over the gamma-ball; extent counts evaluations."""
    if use_stopping is None:
        use_stopping = cfg.use_stopping
    search = _Search(x, cfg.extent, ledger, threshold, use_stopping)
    n = x.shape[0]
    size = max(2, min(cfg.in_pop, cfg.extent))
    elites = min(cfg.in_elites, size - 1)
    tour = max(1, min(cfg.in_tour, size))
    pop = np.array([sample_in_ball(x, gamma, rng) for _ in range(size)])
    fit = np.full(size, -math.inf)
    for j in range(size):
        if search.done:
            return search.result()
        fit[j] = search.evaluate(pop[j])
    sigma = cfg.in_muta * gamma
    while not search.done:
        order = np.argsort(-fit, kind="stable")
        new_pop = [pop[i] for i in order[:elites]]
        new_fit = [fit[i] for i in order[:elites]]
        while len(new_pop) < size and not search.done:
            a = pop[_tournament(fit, tour, rng)]
            b = pop[_tournament(fit, tour, rng)]
            child = np.where(rng.random(n) < 0.5, a, b)
            mask = rng.random(n) < cfg.in_mutp
            if mask.any():
                child = child + mask * rng.normal(0.0, sigma, n)
            child = project_to_ball(child, x, gamma)
            new_pop.append(child)
            new_fit.append(search.evaluate(child))
        if len(new_pop) < size:
            break
        pop, fit = np.array(new_pop), np.array(new_fit)
    return search.result()


def appraise(x, inner: InnerConfig, u: UncertaintySpec | float, threshold, ledger: EvaluationLedger,
             rng: np.random.Generator) -> RobustAppraisal:
    """Estimate the worst case of f over the uncertainty ball around x.

    ``threshold`` is the appraising particle's current personal-best robust
    value (``None`` or ``inf`` disables any early exit). With the stopping
    condition and history-based dormancy on, a history point inside the ball
    whose value already exceeds the threshold short-circuits the search.
    """
    gamma = u.gamma if isinstance(u, UncertaintySpec) else float(u)
    x = np.asarray(x, dtype=float)
    has_threshold = threshold is not None and threshold < math.inf
    if inner.use_stopping and inner.use_history_for_dormancy and has_threshold:
        idx = ledger.within(x, gamma)
        if idx.size:
            k = idx[np.argmax(ledger.values[idx])]
            worst = float(ledger.values[k])
            if worst > threshold:
                return RobustAppraisal(worst, 0, dormant_skip=True,
                                       worst_point=ledger.points[k].copy())

    stop = inner.use_stopping and has_threshold
    if inner.form == "Random":
        result = inner_random(x, inner.extent, gamma, ledger, rng, threshold, stop)
    elif inner.form == "PSO":
        result = inner_pso(x, inner, gamma, ledger, rng, threshold, stop)
    else:
        result = inner_ga(x, inner, gamma, ledger, rng, threshold, stop)

    if inner.use_history_for_pbest:
        idx = ledger.within(x, gamma)
        if idx.size:
            k = idx[np.argmax(ledger.values[idx])]
            if ledger.values[k] > result.estimate:
                result.estimate = float(ledger.values[k])
                result.worst_point = ledger.points[k].copy()
    return result


# --------------------------------------------------------------------------
# post-processing oracle


def sample_ball(center: np.ndarray, gamma: float, size: int, rng: np.random.Generator) -> np.ndarray:
    """``size`` uniform draws from the Euclidean gamma-ball around ``center``."""
    center = np.asarray(center, dtype=float)
    n = center.shape[0]
    z = rng.standard_normal((size, n))
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    radius = gamma * rng.random((size, 1)) ** (1.0 / n)
    return center + z * (radius / norms)


def post_process_robust_value(x, problem: ProblemInstance, samples: int = 1_000_000,
                              rng: np.random.Generator | None = None, chunk: int = 100_000) -> float:
    """Max of f over ``samples`` uniform draws in the uncertainty ball around x.

    Calls the objective directly, so no evaluation budget is charged.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng() if rng is None else rng
    x = np.asarray(x, dtype=float)
    worst = -math.inf
    remaining = samples
    while remaining > 0:
        size = min(chunk, remaining)
        worst = max(worst, float(nominal_eval_batch(problem, sample_ball(x, problem.gamma, size, rng)).max()))
        remaining -= size
    return worst
