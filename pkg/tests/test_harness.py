import csv
import io
import json
import math
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import mannwhitneyu

from robustgp.cli import main
from robustgp.gggp import ArchiveEntry, random_genome
from robustgp.harness import (
    COMPONENTS,
    ExperimentConfig,
    atomic_write,
    best_or_equivalent,
    component_labels,
    component_report,
    evaluate_champion,
    load_heuristic,
    post_process_robust_value,
    sample_ball,
    summarize,
    wilcoxon_rank_sum,
)
from robustgp.problems import get_problem, nominal_eval_batch
from robustgp.robust_eval import EvaluationLedger
from robustgp.swarm import HeuristicConfig


def _read_csv(path):
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(io.StringIO("".join(lines))))


# ---------------------------------------------------------------- sampling oracle

def test_sample_ball_membership_and_radius_law():
    rng = np.random.default_rng(0)
    pts = sample_ball(np.zeros(3), 2.0, 50_000, rng)
    r = np.linalg.norm(pts, axis=1)
    assert r.max() <= 2.0 + 1e-12
    # uniform in a 3-ball: P(r <= 1) = 1/8
    assert abs(np.mean(r <= 1.0) - 0.125) < 0.006


def test_post_process_single_sample_matches_draw():
    p = get_problem("rastrigin", 3)
    x = np.full(3, 0.3)
    got = post_process_robust_value(x, p, samples=1, rng=np.random.default_rng(5))
    draw = sample_ball(x, p.gamma, 1, np.random.default_rng(5))
    assert got == nominal_eval_batch(p, draw)[0]


def test_post_process_sphere_worst_case():
    p = get_problem("sphere", 1)
    v = post_process_robust_value(np.array([20.0]), p, 200_000, np.random.default_rng(1))
    assert v <= 1.0 and abs(v - 1.0) < 0.002


def test_post_process_constant_region_is_exact():
    p = get_problem("sawtooth", 2)
    # find a point whose whole ball sits on one plateau: the first sampled value is then the answer
    rng = np.random.default_rng(2)
    for _ in range(200):
        x = p.domain.sample(rng)
        vals = nominal_eval_batch(p, sample_ball(x, p.gamma, 2000, rng))
        if np.ptp(vals) == 0.0:
            assert post_process_robust_value(x, p, 5000, rng) == vals[0]
            return
    pytest.skip("no plateau ball found")


def test_post_process_does_not_touch_ledgers():
    p = get_problem("sphere", 2)
    led = EvaluationLedger(p, 10)
    post_process_robust_value(np.array([20.0, 20.0]), p, 1000, np.random.default_rng(0))
    assert led.total_spent == 0 and led.budget_remaining == 10
    with pytest.raises(ValueError):
        post_process_robust_value(np.zeros(2), p, 0)


# ---------------------------------------------------------------- champion evaluation

def test_evaluate_champion_rows_and_determinism():
    cfg = HeuristicConfig(group_size=4)
    problems = [get_problem("sphere", 2), get_problem("rastrigin", 2)]
    rows = evaluate_champion(cfg, problems, runs=3, budget=100, seed=4, samples=500)
    assert len(rows) == 6
    again = evaluate_champion(cfg, problems, runs=3, budget=100, seed=4, samples=500)
    assert rows == again
    one = evaluate_champion(cfg, problems[:1], runs=1, budget=100, seed=4, samples=500)
    assert len(one) == 1 and one[0] == rows[0]
    for row in rows:
        assert row.evaluations <= 100
    stats = summarize(rows)
    for s in stats:
        values = [r.post_processed for r in rows if r.problem == s["problem"]]
        assert s["mean"] == pytest.approx(sum(values) / len(values), rel=1e-12)
        assert s["q1"] <= s["median"] <= s["q3"]


# ---------------------------------------------------------------- Wilcoxon

def test_wilcoxon_identical_and_separated():
    a = np.arange(1, 21, dtype=float)
    assert wilcoxon_rank_sum(a, a.copy())[1] >= 0.99
    assert wilcoxon_rank_sum(a, a + 100)[1] < 1e-6
    assert wilcoxon_rank_sum(np.ones(12), np.ones(15))[1] == 1.0
    with pytest.raises(ValueError):
        wilcoxon_rank_sum(np.ones(9), np.ones(20))


@settings(max_examples=60, deadline=None)
@given(st.integers(10, 40), st.integers(10, 40), st.integers(0, 2**32 - 1), st.booleans())
def test_wilcoxon_matches_scipy(n1, n2, seed, ties):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=n1), rng.normal(0.4, size=n2)
    if ties:
        a, b = np.round(a), np.round(b)
    w, p = wilcoxon_rank_sum(a, b)
    ref = mannwhitneyu(a, b, alternative="two-sided", method="asymptotic", use_continuity=True)
    assert w - n1 * (n1 + 1) / 2 == pytest.approx(ref.statistic)
    assert p == pytest.approx(ref.pvalue, rel=1e-9, abs=1e-12)


def test_best_or_equivalent():
    rng = np.random.default_rng(0)
    base = rng.normal(size=30)
    samples = {"a": base, "b": base + 0.01, "c": base + 10}
    assert best_or_equivalent(samples) == {"a", "b"}
    assert best_or_equivalent({}) == set()


# ---------------------------------------------------------------- component report

def _archive(n, seed=0):
    rng = np.random.default_rng(seed)
    return [ArchiveEntry(0, i, random_genome(rng), float(rng.integers(0, 5)), []) for i in range(n)]


def test_identical_genomes_are_all_one_category():
    g = random_genome(np.random.default_rng(3))
    report = component_report([ArchiveEntry(0, i, g, float(i), []) for i in range(10)])
    labels = component_labels(g)
    for (comp, cat), value in report.overall.items():
        assert value == (100.0 if labels[comp] == cat else 0.0)
    assert report.top_third == report.overall


@pytest.mark.parametrize("n", [1, 7, 10, 33, 120])
def test_report_partitions(n):
    archive = _archive(n, seed=n)
    report = component_report(archive)
    assert sum(report.decile_sizes) == n and len(report.deciles) == min(n, 10)
    for comp in COMPONENTS:
        for table in [report.overall, report.top_third] + report.deciles:
            assert sum(table[(comp, cat)] for cat in COMPONENTS[comp]) == pytest.approx(100.0)
        for cat in COMPONENTS[comp]:
            weighted = sum(size * dec[(comp, cat)] for size, dec in zip(report.decile_sizes, report.deciles)) / n
            assert weighted == pytest.approx(report.overall[(comp, cat)])


def test_not_applicable_counts():
    archive = _archive(60, seed=1)
    report = component_report(archive)
    no_dd = sum(1 for e in archive if "DD" not in e.genome.find("<Movement>").choice)
    no_leh = sum(1 for e in archive if "LEH" not in e.genome.find("<Movement>").choice)
    assert report.overall[("Form of r3 vector", "Not applicable")] == pytest.approx(100.0 * no_dd / 60)
    assert report.overall[("Form of relocation due to dormancy", "Not applicable")] == pytest.approx(100.0 * no_leh / 60)
    assert report.overall[("Use of existing info. for dormancy", "Not applicable")] == pytest.approx(100.0 * no_leh / 60)


def test_top_third_uses_best_fitness():
    rng = np.random.default_rng(4)
    good = random_genome(rng)
    bad = random_genome(rng)
    while bad.find("<Network>").choice == good.find("<Network>").choice:
        bad = random_genome(rng)
    archive = [ArchiveEntry(0, i, good if i < 3 else bad, float(i), []) for i in range(9)]
    report = component_report(archive)
    assert report.top_third[("Form of network", good.find("<Network>").choice)] == 100.0
    with pytest.raises(ValueError):
        component_report([])
    assert report.proportions_csv().splitlines()[0] == "component,category,all,top_third"


# ---------------------------------------------------------------- configs and files

def test_experiment_config_validation():
    assert ExperimentConfig().gp.heuristic_budget == 2000
    assert ExperimentConfig(budget=500).gp.heuristic_budget == 500
    with pytest.raises(ValueError):
        ExperimentConfig(mode="dance")
    with pytest.raises(KeyError):
        ExperimentConfig(problems=["nope"])
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"bogus": 1})
    cfg = ExperimentConfig(problems=["sphere", "ackley"], dimension=3, gp={"population_size": 5, "elites": 1})
    assert ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


def test_load_heuristic_accepts_all_forms():
    tree = random_genome(np.random.default_rng(0))
    from robustgp.gggp import decode, tree_to_dict

    d = tree_to_dict(tree)
    assert load_heuristic(d, 500) == decode(tree, 500)
    assert load_heuristic({"genome": d}, 500) == decode(tree, 500)
    cfg = HeuristicConfig(group_size=7)
    assert load_heuristic(cfg.to_dict()) == cfg


def test_atomic_write_replaces(tmp_path):
    path = tmp_path / "f.txt"
    atomic_write(str(path), "one")
    atomic_write(str(path), "two")
    assert path.read_text() == "two"
    assert os.listdir(tmp_path) == ["f.txt"]


# ---------------------------------------------------------------- CLI

def test_cli_problems(capsys):
    assert main(["problems", "--dim", "30"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 11
    assert lines[1].split(",")[1] == "30"


def test_cli_run_is_deterministic(tmp_path):
    conf = tmp_path / "base_rpso.json"
    conf.write_text(json.dumps(HeuristicConfig(group_size=5).to_dict()))
    outs = []
    for k in range(2):
        out = tmp_path / f"r{k}"
        assert main(["run", "--problem", "sphere", "--dim", "2", "--budget", "100", "--seed", "7",
                     "--config", str(conf), "--samples", "1000", "--out", str(out)]) == 0
        outs.append((out / "result.json").read_bytes())
    assert outs[0] == outs[1]
    data = json.loads(outs[0])
    assert data["seed"] == 7 and data["config"]["heuristic"]["group_size"] == 5
    assert data["result"]["evaluations"] <= 100


def test_cli_bad_inputs_exit_nonzero(tmp_path, capsys):
    assert main(["gp", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path / "o")]) != 0
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["gp", "--config", str(bad), "--out", str(tmp_path / "o")]) != 0
    assert main(["run", "--problem", "nothing", "--dim", "2", "--out", str(tmp_path / "o")]) != 0
    unknown = tmp_path / "unknown.json"
    unknown.write_text(json.dumps({"colour": "red"}))
    assert main(["gp", "--config", str(unknown), "--out", str(tmp_path / "o")]) != 0
    assert "error" in capsys.readouterr().err
    assert not (tmp_path / "o" / "config.json").exists()


def test_cli_gp_eval_report_pipeline(tmp_path):
    gp_dir, eval_dir, rep_dir = tmp_path / "gp", tmp_path / "eval", tmp_path / "rep"
    exp = {"mode": "gp-individual", "problems": ["sphere"], "dimension": 2, "budget": 100, "seed": 3,
           "gp": {"population_size": 4, "generations": 1, "elites": 1, "tournament_size": 2,
                  "fitness_replicates": 2}}
    conf = tmp_path / "exp.json"
    conf.write_text(json.dumps(exp))
    assert main(["gp", "--config", str(conf), "--out", str(gp_dir)]) == 0
    echoed = json.loads((gp_dir / "config.json").read_text())
    assert echoed["seed"] == 3 and echoed["config"]["gp"]["population_size"] == 4
    champion = gp_dir / "sphere" / "champion.json"
    archive = json.loads((gp_dir / "sphere" / "archive.json").read_text())
    assert len(archive["entries"]) == 8
    assert len(_read_csv(gp_dir / "sphere" / "history.csv")) == 2

    assert main(["eval", "--champion", str(champion), "--problems", "sphere", "--dim", "2", "--runs", "3",
                 "--budget", "100", "--samples", "500", "--out", str(eval_dir)]) == 0
    rows = _read_csv(eval_dir / "samples.csv")
    summary = _read_csv(eval_dir / "summary.csv")
    assert len(rows) == 3
    mean = sum(float(r["post_processed"]) for r in rows) / 3
    assert math.isclose(float(summary[0]["mean"]), mean, rel_tol=1e-12)

    assert main(["report", "--archive", str(gp_dir / "sphere" / "archive.json"), "--out", str(rep_dir)]) == 0
    props = _read_csv(rep_dir / "proportions.csv")
    assert {r["component"] for r in props} == set(COMPONENTS)
    assert _read_csv(rep_dir / "deciles.csv")


def test_cli_gp_general_flag_overrides(tmp_path):
    out = tmp_path / "g"
    assert main(["gp", "--mode", "gp-general", "--problems", "sphere", "ackley", "--dim", "2", "--budget", "60",
                 "--population", "3", "--generations", "0", "--replicates", "1", "--out", str(out)]) == 0
    champ = json.loads((out / "general" / "champion.json").read_text())
    assert champ["problems"] == ["Sphere", "Ackley"] and champ["fitness"] == 0.0
