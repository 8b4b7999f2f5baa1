import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import kstest

from oracles import grid_leh_optimum
from robustgp.leh import (
    LehConfig,
    check_dormancy_and_relocate,
    global_high_cost_set,
    leh_center,
    min_distance,
)
from robustgp.problems import BoxDomain, get_problem
from robustgp.robust_eval import EvaluationLedger
from robustgp.swarm import Particle

UNIT = BoxDomain.cube(0.0, 1.0, 2)


def _ledger(values_at):
    p = get_problem("sphere", 1)
    led = EvaluationLedger(p, 100)
    for x in values_at:
        led.evaluate(np.array([x]))
    return led


def test_config_validation():
    with pytest.raises(ValueError):
        LehConfig(relocation="Teleport")
    with pytest.raises(ValueError):
        LehConfig(lpop=10, lelites=10)
    with pytest.raises(ValueError):
        LehConfig(lpop=10, ltour=11)
    with pytest.raises(ValueError):
        LehConfig(dorm_threshold=0)


def test_global_high_cost_set_strict():
    led = _ledger([21.0, 20.0 + math.sqrt(2), 20.0 + math.sqrt(3)])  # values 1, 2, 3
    assert len(global_high_cost_set(led, 1e9)) == 0
    assert len(global_high_cost_set(led, -1e9)) == 3
    hcs = global_high_cost_set(led, 2.0 + 1e-12)
    assert len(hcs) == 1 and hcs.points[0, 0] == pytest.approx(20 + math.sqrt(3))


def test_min_distance_matches_direct():
    rng = np.random.default_rng(0)
    c, h = rng.random((30, 4)), rng.random((7, 4))
    direct = np.sqrt(((c[:, None] - h[None]) ** 2).sum(axis=2)).min(axis=1)
    assert np.allclose(min_distance(c, h), direct)


def test_empty_set_gives_center():
    c, fit = leh_center(np.empty((0, 2)), UNIT, LehConfig(), np.random.default_rng(0))
    assert np.allclose(c, [0.5, 0.5]) and fit == math.inf


def test_corners_give_center():
    corners = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=float)
    c, fit = leh_center(corners, UNIT, LehConfig(), np.random.default_rng(0))
    opt = grid_leh_optimum(corners)
    assert fit >= 0.98 * opt and np.allclose(c, [0.5, 0.5], atol=0.05)


def test_center_hcp_gives_corner():
    c, fit = leh_center(np.array([[0.5, 0.5]]), UNIT, LehConfig(), np.random.default_rng(1))
    assert fit == pytest.approx(math.sqrt(2) / 2, rel=0.02)
    assert np.all(np.minimum(c, 1 - c) < 0.05)


def test_not_found_below_gamma():
    c, fit = leh_center(np.array([[0.5, 0.5]]), UNIT, LehConfig(), np.random.default_rng(1), gamma=1.0)
    assert c is None and fit < 1.0


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_center_in_box_and_beats_initial_best(k, n, seed):
    rng = np.random.default_rng(seed)
    dom = BoxDomain(rng.uniform(-5, 0, n), rng.uniform(1, 5, n))
    hcps = dom.sample(rng, k)
    cfg = LehConfig(lpop=12, ga_generations=5, lelites=1, ltour=2)
    # the same seed reproduces the initial population the GA starts from
    initial = dom.sample(np.random.default_rng(seed + 1), cfg.lpop)
    init_best = min_distance(initial, hcps).max()
    c, fit = leh_center(hcps, dom, cfg, np.random.default_rng(seed + 1))
    assert dom.contains(c)
    assert fit >= init_best
    assert fit == pytest.approx(min_distance(c[None], hcps)[0])


def _particle(n=2, dormancy=0):
    x = np.zeros(n)
    return Particle(x, np.zeros(n), x.copy(), dormancy=dormancy)


def test_no_relocation_below_threshold():
    p = _particle(dormancy=2)
    led = EvaluationLedger(get_problem("sphere", 2), 10)
    assert check_dormancy_and_relocate(p, LehConfig(dorm_threshold=3), 0.0, led, UNIT, 0.1,
                                       np.random.default_rng(0)) is None
    assert p.dormancy == 2


def test_leh_relocation_with_empty_history_is_center():
    p = _particle(dormancy=5)
    led = EvaluationLedger(get_problem("sphere", 2), 10)
    new = check_dormancy_and_relocate(p, LehConfig(dorm_threshold=5), 0.0, led, UNIT, 0.1,
                                      np.random.default_rng(0))
    assert np.allclose(new, [0.5, 0.5]) and p.dormancy == 0
    assert np.all((p.velocity >= 0) & (p.velocity <= 0.1))
    assert led.total_spent == 0


def test_random_relocation_is_uniform():
    rng = np.random.default_rng(0)
    led = EvaluationLedger(get_problem("sphere", 2), 10)
    dom = BoxDomain(np.array([-2.0, 3.0]), np.array([1.0, 7.0]))
    cfg = LehConfig(relocation="Random", dorm_threshold=1)
    pts = []
    for _ in range(10_000):
        p = _particle(dormancy=1)
        pts.append(check_dormancy_and_relocate(p, cfg, 0.0, led, dom, 0.1, rng))
    pts = np.array(pts)
    for i in range(2):
        width = dom.upper[i] - dom.lower[i]
        assert kstest((pts[:, i] - dom.lower[i]) / width, "uniform").pvalue > 0.01


def test_leh_relocation_ignores_budget():
    prob = get_problem("sphere", 2)
    led = EvaluationLedger(prob, 50)
    rng = np.random.default_rng(0)
    for _ in range(50):
        led.evaluate(prob.domain.sample(rng))
    before = (led.total_spent, led.points.copy())
    p = _particle(dormancy=3)
    new = check_dormancy_and_relocate(p, LehConfig(dorm_threshold=3), float(np.median(led.values)), led,
                                      prob.domain, prob.gamma, rng)
    assert prob.domain.contains(new)
    assert led.total_spent == before[0] and np.array_equal(led.points, before[1])
