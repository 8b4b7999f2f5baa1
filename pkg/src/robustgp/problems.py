"""Robust test functions with their box domains and uncertainty radii.

Every objective accepts an array whose last axis has length ``n`` and is
vectorised over any leading axes, so a batch of neighbourhood samples can be
evaluated in one call. Points outside the box are evaluated as-is.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "BoxDomain",
    "ProblemInstance",
    "PROBLEM_NAMES",
    "canonical_suite",
    "get_problem",
    "nominal_eval",
    "nominal_eval_batch",
]


@dataclass(frozen=True)
class BoxDomain:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        if lower.shape != upper.shape or lower.ndim != 1:
            raise ValueError("lower and upper must be 1-D arrays of equal length")
        if not np.all(lower < upper):
            raise ValueError("every lower bound must be strictly below its upper bound")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def cube(cls, low: float, high: float, n: int) -> "BoxDomain":
        return cls(np.full(n, float(low)), np.full(n, float(high)))

    @property
    def dimension(self) -> int:
        return self.lower.shape[0]

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def contains(self, x: np.ndarray) -> bool:
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        shape = (self.dimension,) if size is None else (size, self.dimension)
        return self.lower + rng.random(shape) * self.width

    def clip(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.lower, self.upper)


@dataclass(frozen=True)
class ProblemInstance:
    name: str
    dimension: int
    domain: BoxDomain
    gamma: float

    def __post_init__(self) -> None:
        if self.dimension < 1:
            raise ValueError("dimension must be positive")
        if not self.gamma > 0:
            raise ValueError("gamma must be > 0")
        if self.domain.dimension != self.dimension:
            raise ValueError("domain dimension does not match problem dimension")

    def __call__(self, x) -> float:
        return nominal_eval(self, x)

    @property
    def key(self) -> str:
        return _slug(self.name)


# --------------------------------------------------------------------------
# objectives; x has shape (..., n)


def rastrigin(x: np.ndarray) -> np.ndarray:
    z = x - 20.0
    n = x.shape[-1]
    return 10.0 * n + np.sum(z**2 - 10.0 * np.cos(2.0 * np.pi * z), axis=-1)


def multipeak_f1(x: np.ndarray) -> np.ndarray:
    y = x + 5.0
    envelope = np.exp(-2.0 * math.log(2.0) * ((y - 0.1) / 0.8) ** 2)
    s = np.sin(5.0 * np.pi * y)
    middle = (0.4 < y) & (y <= 0.6)
    g = np.where(middle, envelope * np.sqrt(np.abs(s)), envelope * s**6)
    return -np.mean(g, axis=-1)


def multipeak_f2(x: np.ndarray) -> np.ndarray:
    y = x - 10.0
    g = 2.0 * np.sin(10.0 * np.exp(-0.2 * y) * y) * np.exp(-0.25 * y)
    return np.mean(g, axis=-1)


BRANKE_B1, BRANKE_B2, BRANKE_C1, BRANKE_C2 = 2.0, 2.0, 1.0, 1.3


def brankes_multipeak(x: np.ndarray) -> np.ndarray:
    b1, b2, c1, c2 = BRANKE_B1, BRANKE_B2, BRANKE_C1, BRANKE_C2
    y = x + 5.0
    left = c1 * (1.0 - 4.0 * (y + b1 / 2.0) ** 2 / b1**2)
    right = c2 * 16.0 ** (-2.0 * np.abs(b2 - 2.0 * y) / b2)
    g = np.where((-b1 <= y) & (y < 0.0), left, np.where((0.0 <= y) & (y <= b2), right, 0.0))
    return max(c1, c2) - np.mean(g, axis=-1)


PICKELHAUBE_C1, PICKELHAUBE_C2, PICKELHAUBE_D2 = 625.0 / 624.0, 1.5975, 1.1513


def pickelhaube(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    scale = 5.0 / (5.0 - math.sqrt(5.0))
    radius = 5.0 * math.sqrt(n)
    g0 = 0.1 * np.exp(-0.5 * np.linalg.norm(x + 30.0, axis=-1))
    r_left = np.linalg.norm(x + 30.0 + 5.0, axis=-1) / radius
    r_right = np.linalg.norm(x + 30.0 - 5.0, axis=-1) / radius
    g1a = scale * (1.0 - np.sqrt(r_left))
    g1b = PICKELHAUBE_C1 * (1.0 - r_left**4)
    g2 = PICKELHAUBE_C2 * (1.0 - r_right**PICKELHAUBE_D2)
    return scale - np.maximum(np.maximum(g0, g1a), np.maximum(g1b, g2))


def heaviside_sphere(x: np.ndarray) -> np.ndarray:
    y = x + 20.0
    # strict "0 < y" selects g = 0; y == 0 falls to the otherwise branch (g = 1)
    g = np.where(0.0 < y, 0.0, 1.0)
    return (1.0 - np.prod(g, axis=-1)) + np.sum((y / 10.0) ** 2, axis=-1)


def sawtooth(x: np.ndarray) -> np.ndarray:
    y = x + 5.0
    g = np.where((-0.8 <= y) & (y < 0.2), y + 0.8, 0.0)
    return 1.0 - np.mean(g, axis=-1)


def ackley(x: np.ndarray) -> np.ndarray:
    z = x - 50.0
    first = -20.0 * np.exp(-0.2 * np.sqrt(np.mean(z**2, axis=-1)))
    second = -np.exp(np.mean(np.cos(2.0 * np.pi * z), axis=-1))
    return first + second + 20.0 + math.e


def sphere(x: np.ndarray) -> np.ndarray:
    return np.sum((x - 20.0) ** 2, axis=-1)


def rosenbrock(x: np.ndarray) -> np.ndarray:
    z = x - 10.0
    head, tail = z[..., :-1], z[..., 1:]
    return np.sum(100.0 * (tail - head**2) ** 2 + (head - 1.0) ** 2, axis=-1)


# name -> (objective, lower, upper, gamma)
_TABLE: dict[str, tuple[Callable[[np.ndarray], np.ndarray], float, float, float]] = {
    "Rastrigin": (rastrigin, 14.88, 25.12, 0.5),
    "Multipeak F1": (multipeak_f1, -5.0, -4.0, 0.0625),
    "Multipeak F2": (multipeak_f2, 10.0, 20.0, 0.5),
    "Branke's Multipeak": (brankes_multipeak, -7.0, -3.0, 0.5),
    "Pickelhaube": (pickelhaube, -40.0, -20.0, 1.0),
    "Heaviside Sphere": (heaviside_sphere, -30.0, -10.0, 1.0),
    "Sawtooth": (sawtooth, -6.0, -4.0, 0.2),
    "Ackley": (ackley, 17.232, 82.768, 3.0),
    "Sphere": (sphere, 15.0, 25.0, 1.0),
    "Rosenbrock": (rosenbrock, 7.952, 12.048, 0.25),
}

PROBLEM_NAMES: tuple[str, ...] = tuple(_TABLE)


def _slug(name: str) -> str:
    return re.sub(r"[^a-z0-9]+", "-", name.lower().replace("'", "")).strip("-")


_ALIASES = {_slug(name): name for name in _TABLE}
_ALIASES.update({"branke": "Branke's Multipeak", "brankes": "Branke's Multipeak",
                 "heaviside": "Heaviside Sphere", "ackleys": "Ackley"})


def _canonical_name(name: str) -> str:
    if name in _TABLE:
        return name
    try:
        return _ALIASES[_slug(name)]
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; expected one of {list(_TABLE)}") from None


def get_problem(name: str, dimension: int) -> ProblemInstance:
    """Look up a problem by its table name or a lowercase-hyphenated alias."""
    canonical = _canonical_name(name)
    _, low, high, gamma = _TABLE[canonical]
    return ProblemInstance(canonical, dimension, BoxDomain.cube(low, high, dimension), gamma)


def canonical_suite(dimension: int) -> list[ProblemInstance]:
    if dimension < 1:
        raise ValueError("dimension must be >= 1")
    return [get_problem(name, dimension) for name in _TABLE]


def objective(problem: ProblemInstance | str) -> Callable[[np.ndarray], np.ndarray]:
    name = problem.name if isinstance(problem, ProblemInstance) else problem
    return _TABLE[_canonical_name(name)][0]


def nominal_eval_batch(problem: ProblemInstance, points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    if points.shape[-1] != problem.dimension:
        raise ValueError(
            f"expected points with last axis {problem.dimension}, got shape {points.shape}"
        )
    return objective(problem)(points)


def nominal_eval(problem: ProblemInstance, x) -> float:
    x = np.asarray(x, dtype=float)
    if x.shape != (problem.dimension,):
        raise ValueError(f"expected a point of length {problem.dimension}, got shape {x.shape}")
    return float(objective(problem)(x))
