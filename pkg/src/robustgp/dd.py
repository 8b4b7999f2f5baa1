"""Descent directions away from local high-cost points.

The direction subproblem

    min beta  s.t.  ||d|| <= 1,  d . u_h <= beta for all h,  beta <= -eps

(u_h the unit vectors from x towards each high-cost point) is the dual of the
minimum-norm point problem over conv{u_h}: with p that point, the optimum is
d = -p/||p||, beta = -||p||, and the problem is infeasible when ||p|| < eps.
The minimum-norm point is found exactly with Wolfe's algorithm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .robust_eval import EvaluationLedger

__all__ = [
    "DdConfig",
    "Direction",
    "HighCostSet",
    "dd_velocity_component",
    "descent_direction",
    "high_cost_set",
    "min_norm_point",
    "solve_direction",
    "step_length",
]

DEFAULT_EPSILON = 1e-3


@dataclass(frozen=True)
class DdConfig:
    c3: float = 1.0
    sigma: float = 1.0
    sigma_limit: float = 0.0
    # fraction of gamma; the absolute minimum step is min_step_frac * gamma
    min_step_frac: float = 0.0
    r3_mode: str = "Random"
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self) -> None:
        if not self.sigma >= self.sigma_limit >= 0:
            raise ValueError("need sigma >= sigma_limit >= 0")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if self.min_step_frac < 0:
            raise ValueError("min_step_frac must be >= 0")
        if self.r3_mode not in ("Random", "Unity"):
            raise ValueError("r3_mode must be 'Random' or 'Unity'")


@dataclass
class HighCostSet:
    points: np.ndarray
    values: np.ndarray

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass
class Direction:
    d: np.ndarray
    beta: float


def high_cost_set(x, g_est: float, sigma: float, gamma: float, ledger: EvaluationLedger) -> HighCostSet:
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if len(ledger) == 0:
        return HighCostSet(np.empty((0, n)), np.empty(0))
    pts, vals = ledger.points, ledger.values
    d2 = np.sum((pts - x) ** 2, axis=1)
    keep = (d2 <= gamma * gamma) & (d2 > 0.0) & (vals >= g_est - sigma)
    return HighCostSet(pts[keep].copy(), vals[keep].copy())


def _affine_minimizer(G: np.ndarray) -> np.ndarray:
    """Coefficients (summing to one) of the min-norm point of the affine hull, given the Gram matrix."""
    k = G.shape[0]
    kkt = np.ones((k + 1, k + 1))
    kkt[:k, :k] = G
    kkt[k, k] = 0.0
    rhs = np.zeros(k + 1)
    rhs[k] = 1.0
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError:
        sol = None
    if sol is None or not np.all(np.isfinite(sol)) or np.abs(kkt @ sol - rhs).max() > 1e-9:
        sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    return sol[:k]


def _min_norm_coefficients(G: np.ndarray, tol: float = 1e-10, max_iter: int | None = None,
                           stop_below: float = 0.0) -> np.ndarray:
    """Wolfe's algorithm on a Gram matrix; returns convex weights of the min-norm point.

    Iterates always lie in the hull, so once one has norm below ``stop_below``
    the search ends early with that iterate.
    """
    m = G.shape[0]
    if m == 1:
        return np.ones(1)
    if m == 2:
        # closest point of a segment to the origin
        span = G[0, 0] - 2.0 * G[0, 1] + G[1, 1]
        t = min(1.0, max(0.0, (G[0, 0] - G[0, 1]) / span)) if span > 0 else 0.0
        return np.array([1.0 - t, t])
    if max_iter is None:
        max_iter = 100 * m
    diag = np.diag(G)
    scale = float(diag.max())
    first = int(np.argmin(diag))
    active = [first]
    lam = np.array([1.0])
    for _ in range(max_iter):
        proj = G[:, active] @ lam
        sq = lam @ proj[active]
        if sq < stop_below * stop_below:
            break
        j = int(np.argmin(proj))
        if proj[j] >= sq - tol * scale or j in active:
            break
        active.append(j)
        lam = np.append(lam, 0.0)
        while True:
            alpha = _affine_minimizer(G[np.ix_(active, active)])
            if np.all(alpha > tol):
                lam = alpha
                break
            neg = alpha <= tol
            denom = lam[neg] - alpha[neg]
            theta = np.min(np.where(denom > 0, lam[neg] / np.where(denom > 0, denom, 1.0), 1.0))
            lam = theta * alpha + (1.0 - theta) * lam
            lam[lam <= tol] = 0.0
            keep = lam > 0.0
            active = [a for a, k in zip(active, keep) if k]
            lam = lam[keep] / lam[keep].sum()
            if len(active) == 1:
                break
    weights = np.zeros(m)
    weights[active] = lam
    return weights


def min_norm_point(P: np.ndarray, tol: float = 1e-10, max_iter: int | None = None) -> np.ndarray:
    """Wolfe's algorithm for the point of smallest norm in conv(rows of P)."""
    P = np.asarray(P, dtype=float)
    if P.shape[0] == 0:
        raise ValueError("need at least one point")
    return _min_norm_coefficients(P @ P.T, tol, max_iter) @ P


def _unit_offsets(x: np.ndarray, pts: np.ndarray) -> np.ndarray:
    diff = pts - x
    norms = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    if np.any(norms == 0.0):
        raise ValueError("high-cost points must differ from x")
    return diff / norms[:, None]


def _direction_from(U: np.ndarray, G: np.ndarray, epsilon: float) -> Direction | None:
    p = _min_norm_coefficients(G, stop_below=epsilon) @ U
    p_norm = float(np.linalg.norm(p))
    if p_norm < epsilon:
        return None
    return Direction(-p / p_norm, -p_norm)


def solve_direction(x, hcs: HighCostSet | np.ndarray, epsilon: float = DEFAULT_EPSILON) -> Direction | None:
    """Optimal descent direction away from the high-cost points, or None if infeasible."""
    x = np.asarray(x, dtype=float)
    pts = hcs.points if isinstance(hcs, HighCostSet) else np.asarray(hcs, dtype=float)
    if pts.shape[0] == 0:
        raise ValueError("high-cost set is empty")
    U = _unit_offsets(x, pts)
    return _direction_from(U, U @ U.T, epsilon)


def step_length(x, d, hcs: HighCostSet | np.ndarray, gamma: float) -> float:
    """Smallest step along d that leaves every high-cost point at least gamma away."""
    x = np.asarray(x, dtype=float)
    pts = hcs.points if isinstance(hcs, HighCostSet) else np.asarray(hcs, dtype=float)
    diff = pts - x
    a = diff @ d
    disc = a * a - np.sum(diff * diff, axis=1) + gamma * gamma
    # members lie within gamma of x, so the discriminant is >= a^2 >= 0 up to rounding
    assert np.all(disc >= -1e-9 * max(1.0, gamma * gamma)), "high-cost point outside the ball"
    return float(np.max(a + np.sqrt(np.maximum(disc, 0.0))))


def dd_velocity_component(d, c3: float, r3_mode: str, rng: np.random.Generator) -> np.ndarray:
    d = np.asarray(d, dtype=float)
    if r3_mode == "Unity":
        return c3 * d
    return c3 * rng.random(d.shape[0]) * d


def descent_direction(x, g_est: float, cfg: DdConfig, gamma: float, ledger: EvaluationLedger,
                      max_halvings: int = 30) -> np.ndarray | None:
    """Direction used in the d.d. velocity term for a particle appraised at x.

    sigma is halved while no feasible direction exists; once it drops below
    sigma_limit (or the halving cap is hit) no direction is returned. A
    direction whose step length falls short of min_step is discarded.
    """
    x = np.asarray(x, dtype=float)
    widest = high_cost_set(x, g_est, cfg.sigma, gamma, ledger)
    if len(widest) == 0:
        return None
    # shrinking sigma only drops the lowest-valued points, so every smaller
    # set is a prefix of this ordering and shares its Gram matrix
    order = np.argsort(-widest.values, kind="stable")
    pts, vals = widest.points[order], widest.values[order]
    U = _unit_offsets(x, pts)
    G = U @ U.T
    sigma = cfg.sigma
    last_k = -1
    for _ in range(max_halvings + 1):
        k = int(np.count_nonzero(vals >= g_est - sigma))
        if k == 0:
            return None
        # an unchanged set has the same (infeasible) verdict
        found = _direction_from(U[:k], G[:k, :k], cfg.epsilon) if k != last_k else None
        last_k = k
        if found is not None:
            if step_length(x, found.d, pts[:k], gamma) < cfg.min_step_frac * gamma:
                return None
            return found.d
        sigma *= 0.5
        if sigma < cfg.sigma_limit or sigma == 0.0:
            return None
    return None
