"""Independent brute-force references used by the tests."""

import math

import numpy as np


def brute_force_beta(units: np.ndarray, m: int = 10_000) -> tuple[float, np.ndarray]:
    """min over unit d in the plane of max_h d.u_h, by scanning m angles."""
    theta = np.linspace(0.0, 2.0 * math.pi, m, endpoint=False)
    dirs = np.column_stack([np.cos(theta), np.sin(theta)])
    worst = (dirs @ units.T).max(axis=1)
    k = int(np.argmin(worst))
    return float(worst[k]), dirs[k]


def grid_leh_optimum(hcps: np.ndarray, low: float = 0.0, high: float = 1.0, k: int = 200) -> float:
    """Best min-distance to the hcps over a k x k grid of the square."""
    g = np.linspace(low, high, k)
    grid = np.array(np.meshgrid(g, g)).reshape(2, -1).T
    d = np.sqrt(((grid[:, None, :] - hcps[None, :, :]) ** 2).sum(axis=2))
    return float(d.min(axis=1).max())


def elimination_oracle(scores) -> list[int]:
    """Plain-python elimination ranking: best-to-worst heuristic indices."""
    scores = [list(map(float, row)) for row in scores]
    remaining = list(range(len(scores)))
    eliminated = []
    while remaining:
        combined = {h: 0.0 for h in remaining}
        for p in range(len(scores[0])):
            column = [(scores[h][p], h) for h in remaining]
            for h in remaining:
                below = sum(1 for v, _ in column if v < scores[h][p])
                equal = sum(1 for v, _ in column if v == scores[h][p])
                combined[h] += below + (equal + 1) / 2.0
        means = {h: sum(scores[h]) / len(scores[h]) for h in remaining}
        worst = remaining[0]
        for h in remaining[1:]:
            if (combined[h], means[h], h) > (combined[worst], means[worst], worst):
                worst = h
        remaining.remove(worst)
        eliminated.append(worst)
    return eliminated[::-1]
