"""Largest-empty-hypersphere relocation of dormant particles."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .problems import BoxDomain
from .robust_eval import EvaluationLedger

__all__ = [
    "GlobalHighCostSet",
    "LehConfig",
    "check_dormancy_and_relocate",
    "global_high_cost_set",
    "initial_velocity",
    "leh_center",
    "min_distance",
]


@dataclass(frozen=True)
class LehConfig:
    relocation: str = "LEH"
    dorm_threshold: int = 5
    lpop: int = 80
    lmutp: float = 0.7
    # mutation standard deviation as a fraction of each box width
    lmuta: float = 0.3
    lelites: int = 2
    ltour: int = 2
    ga_generations: int = 30

    def __post_init__(self) -> None:
        if self.relocation not in ("LEH", "Random"):
            raise ValueError("relocation must be 'LEH' or 'Random'")
        if self.dorm_threshold < 1:
            raise ValueError("dorm_threshold must be >= 1")
        if self.lpop < 2:
            raise ValueError("lpop must be >= 2")
        if not 0 <= self.lelites < self.lpop:
            raise ValueError("lelites must lie in [0, lpop)")
        if not 1 <= self.ltour <= self.lpop:
            raise ValueError("ltour must lie in [1, lpop]")


@dataclass
class GlobalHighCostSet:
    points: np.ndarray
    tau: float

    def __len__(self) -> int:
        return self.points.shape[0]


def global_high_cost_set(ledger: EvaluationLedger, tau: float) -> GlobalHighCostSet:
    return GlobalHighCostSet(ledger.points[ledger.values > tau].copy(), tau)


def min_distance(candidates: np.ndarray, hcps: np.ndarray, _hcps_t=None, _hcps_sq=None) -> np.ndarray:
    """Distance from each candidate row to its nearest high-cost point."""
    if hcps.shape[0] == 0:
        return np.full(candidates.shape[0], math.inf)
    hcps_t = -2.0 * hcps.T if _hcps_t is None else _hcps_t
    hcps_sq = np.einsum("ij,ij->i", hcps, hcps) if _hcps_sq is None else _hcps_sq
    # |c|^2 - 2 c.h + |h|^2, clamped against rounding
    cross = candidates @ hcps_t
    cross += hcps_sq
    d2 = cross.min(axis=1) + np.einsum("ij,ij->i", candidates, candidates)
    return np.sqrt(np.maximum(d2, 0.0))


def leh_center(hcs: GlobalHighCostSet | np.ndarray, domain: BoxDomain, cfg: LehConfig,
               rng: np.random.Generator, gamma: float | None = None) -> tuple[np.ndarray | None, float]:
    """GA estimate of the in-box point furthest from every high-cost point.

    Returns ``(center, fitness)``. With ``gamma`` given, ``center`` is ``None``
    when no candidate reaches distance gamma from all high-cost points.
    """
    pts = hcs.points if isinstance(hcs, GlobalHighCostSet) else np.asarray(hcs, dtype=float)
    if pts.shape[0] == 0:
        return domain.center.copy(), math.inf
    n = domain.dimension
    hcps_t = -2.0 * pts.T
    hcps_sq = np.einsum("ij,ij->i", pts, pts)
    pop = domain.sample(rng, cfg.lpop)
    fit = min_distance(pop, pts, hcps_t, hcps_sq)
    sigma = cfg.lmuta * domain.width
    best = int(np.argmax(fit))
    best_point, best_fit = pop[best].copy(), float(fit[best])
    m = cfg.lpop - cfg.lelites
    winner_cdf = _tournament_winner_cdf(cfg.lpop, cfg.ltour)
    for _ in range(cfg.ga_generations):
        order = np.argsort(-fit, kind="stable")
        parents = order[np.searchsorted(winner_cdf, rng.random(2 * m), side="right")]
        a, b = parents[:m], parents[m:]
        children = np.where(rng.random((m, n)) < 0.5, pop[a], pop[b])
        mask = rng.random((m, n)) < cfg.lmutp
        children = domain.clip(children + mask * rng.standard_normal((m, n)) * sigma)
        child_fit = min_distance(children, pts, hcps_t, hcps_sq)
        elite = order[: cfg.lelites]
        pop = np.vstack([pop[elite], children])
        fit = np.concatenate([fit[elite], child_fit])
        k = int(np.argmax(fit))
        if fit[k] > best_fit:
            best_point, best_fit = pop[k].copy(), float(fit[k])
    if gamma is not None and best_fit < gamma:
        return None, best_fit
    return best_point, best_fit


def _tournament_winner_cdf(pop: int, size: int) -> np.ndarray:
    """CDF over fitness rank of the winner of a size-``size`` tournament without replacement.

    The winner is the best-ranked entrant, so P(rank >= r) = C(pop-r, size) / C(pop, size).
    Sampling ranks from this CDF is equivalent to running the tournaments.
    """
    r = np.arange(1, pop + 1)
    survive = np.array([math.comb(pop - k, size) for k in r], dtype=float) / math.comb(pop, size)
    cdf = 1.0 - survive
    cdf[-1] = 1.0
    return cdf[:-1]


def initial_velocity(n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.random(n) * 0.1


def check_dormancy_and_relocate(particle, cfg: LehConfig, swarm_best: float, ledger: EvaluationLedger,
                                domain: BoxDomain, gamma: float, rng: np.random.Generator) -> np.ndarray | None:
    """Relocate a particle that has gone ``dorm_threshold`` iterations without evaluating.

    Mutates ``particle`` in place (position, velocity, dormancy counter) and
    returns the new position, or ``None`` when the particle is not dormant.
    """
    if particle.dormancy < cfg.dorm_threshold:
        return None
    target = None
    if cfg.relocation == "LEH":
        target, _ = leh_center(global_high_cost_set(ledger, swarm_best), domain, cfg, rng, gamma)
    if target is None:
        target = domain.sample(rng)
    particle.position = target
    particle.velocity = initial_velocity(domain.dimension, rng)
    particle.dormancy = 0
    return target
