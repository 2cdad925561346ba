"""Acceptance suite: one PASS/FAIL line per criterion, printed with ``pytest -s`` or in the captured output."""

from __future__ import annotations

import itertools
import math
import time

import numpy as np
import pytest

from persona_align.baselines import mnl_fit
from persona_align.cli import main
from persona_align.data import SocioDemographics, filter_records, parse_swissmetro, split_datasets
from persona_align.em import (
    MStepObjective,
    TrainConfig,
    e_step,
    exact_log_likelihood,
    modified_weights,
    simulated_likelihood,
    train,
    variance_penalty,
)
from persona_align.evaluation import f1_scores, js_divergence
from persona_align.loading import DIM_SIZES, N_PARAMS, OFFSETS, EmbeddingParams, check_similarity_conditions
from persona_align.oracle.synthetic import SyntheticChoiceOracle
from persona_align.synth import PopulationSpec, generate_population, mnl_records, same_group_mass

RESULTS: list[str] = []

ALL_PROFILES = [SocioDemographics.from_codes(c) for c in itertools.product(range(2), range(5), range(3), range(2))]


def report(n: int, ok: bool, detail: str, started: float, budget: float) -> None:
    elapsed = time.perf_counter() - started
    ok = bool(ok)
    in_time = elapsed < budget
    status = "PASS" if ok and in_time else "FAIL"
    line = f"[criterion {n:>2}] {status}  {detail}  ({elapsed:.1f}s of {budget:.0f}s)"
    RESULTS.append(line)
    print("\n" + line)
    assert ok, detail
    assert in_time, f"took {elapsed:.1f}s, budget {budget}s"


def test_criterion_01_data_fidelity(swissmetro_path):
    t0 = time.perf_counter()
    panels = filter_records(parse_swissmetro(swissmetro_path))
    b = split_datasets(panels, 42)
    got = (len(panels), sum(len(p.observations) for p in panels), len(b.detailed), len(b.detailed_records),
           len(b.general), len(b.test))  # fmt: skip
    report(1, got == (1004, 9036, 250, 2250, 200, 400), f"respondents/records/D_h/D_h records/D_l/D_t = {got}", t0, 10)


def test_criterion_02_loading_laws():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    violations = 0
    pairs = 0
    for _ in range(1000):
        params = EmbeddingParams.from_vector(rng.standard_normal(N_PARAMS))
        profiles = [ALL_PROFILES[i] for i in rng.choice(60, size=8, replace=False)]
        r = check_similarity_conditions(params, profiles, tol=1e-12)
        violations += len(r.violations)
        pairs += r.checked_pairs
    report(2, violations == 0, f"1000 draws, {pairs} pairs, {violations} violations of the five conditions", t0, 5)


def test_criterion_03_enumeration_equivalence():
    t0 = time.perf_counter()
    pop = generate_population(PopulationSpec(n_personas=8, n_general=20, n_test=10, n_holdout_profiles=10, seed=3))
    oracle = SyntheticChoiceOracle()
    worst = 0.0
    for seed in range(5):
        params = EmbeddingParams.random(seed)
        out = e_step(params, pop.bundle.general, pop.basis, 8, oracle, np.random.default_rng(seed))
        sim = simulated_likelihood(out).total
        exact = exact_log_likelihood(params, pop.bundle.general, pop.basis, oracle)
        worst = max(worst, abs(sim - exact))
    report(3, worst <= 1e-9, f"max |simulated - exact| log-likelihood at L=K=8 over 5 draws = {worst:.2e}", t0, 10)


def test_criterion_04_em_monotonicity():
    t0 = time.perf_counter()
    pop = generate_population(PopulationSpec(n_personas=8, n_general=20, n_test=10, n_holdout_profiles=10, seed=3))
    cfg = TrainConfig(L0=8, max_iterations=20, alpha_e=0.0, alpha_m=0.0, convergence_tol=1e-300, track_exact=True, seed=1)
    _, state = train(pop.bundle, pop.basis, SyntheticChoiceOracle(), cfg)
    lls = [state.initial_exact_ll] + [h["exact_ll"] for h in state.history]
    drops = [b - a for a, b in zip(lls, lls[1:]) if b < a - 1e-8]
    ok = not drops and all(h["L"] == 8 for h in state.history)
    report(4, ok, f"{len(state.history)} iterations, exact LL {lls[0]:.4f} -> {lls[-1]:.4f}, {len(drops)} decreases", t0, 30)


def test_criterion_05_gradient_correctness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    worst = 0.0
    h = 1e-6
    for _ in range(100):
        n, k = int(rng.integers(5, 30)), int(rng.integers(3, 12))
        rec = np.stack([rng.integers(0, s, n) for s in DIM_SIZES], axis=1)
        bas = np.stack([rng.integers(0, s, k) for s in DIM_SIZES], axis=1)
        W = rng.uniform(size=(n, k)) * (rng.uniform(size=(n, k)) < 0.5)
        f = MStepObjective(rec, bas, W, float(rng.uniform(0, 1)), 40 / 3)
        beta = rng.standard_normal(N_PARAMS)
        _, g = f(beta)
        fd = np.array([(f(beta + h * e)[0] - f(beta - h * e)[0]) / (2 * h) for e in np.eye(N_PARAMS)])
        worst = max(worst, np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12))
    report(5, worst <= 1e-5, f"max relative gradient error over 100 draws = {worst:.2e}", t0, 30)


def test_criterion_06_recoverability():
    t0 = time.perf_counter()
    pop = generate_population(PopulationSpec(n_personas=40, n_general=200, n_holdout_profiles=100, seed=0))
    oracle = SyntheticChoiceOracle()
    init_mean = float(np.mean([same_group_mass(EmbeddingParams.random(np.random.default_rng([s, 1])), pop.holdout_profiles, pop.basis)
                               for s in range(200)]))  # fmt: skip
    uniform = same_group_mass(EmbeddingParams.constant(1.0), pop.holdout_profiles, pop.basis, lam=0.0)
    trained = []
    for seed in range(3):
        params, _ = train(pop.bundle, pop.basis, oracle, TrainConfig(max_iterations=20, seed=seed))
        trained.append(same_group_mass(params, pop.holdout_profiles, pop.basis))
    ok = min(trained) >= 0.80
    detail = (f"same-group mass after training {[round(x, 3) for x in trained]} (seeds 0-2); "
              f"uniform loading {uniform:.3f}; random init mean over 200 seeds {init_mean:.3f}")  # fmt: skip
    report(6, ok, detail, t0, 300)


def test_criterion_07_weight_regimes():
    t0 = time.perf_counter()
    pop = generate_population(PopulationSpec(n_personas=40, n_general=200, n_holdout_profiles=10, seed=0))
    out = e_step(EmbeddingParams.random(0), pop.bundle.general, pop.basis, 6, SyntheticChoiceOracle(),
                 np.random.default_rng(0), alpha_e=0.5)  # fmt: skip
    sums = [math.fsum(w) for w in out.weights]
    regimes_ok = all(s in (0.0, 0.5, 1.0) for s in sums)
    all_correct = [math.fsum(w) for w, c in zip(out.weights, out.correct) if c.all()]
    rng = np.random.default_rng(7)
    random_ok = True
    for _ in range(20_000):
        L = int(rng.integers(1, 15))
        p = rng.uniform(1e-9, 1, L)
        c = rng.uniform(size=L) < rng.uniform()
        s = math.fsum(modified_weights(p, c, 0.5))
        random_ok &= s == (0.0 if not c.any() else 0.5 if c.all() else 1.0)
    detail = (f"{len(sums)} E-step records in regimes {sorted(set(sums))}; {len(all_correct)} all-correct sum to "
              f"{sorted(set(all_correct))}; 20000 random rows exact={random_ok}")  # fmt: skip
    report(7, regimes_ok and random_ok and set(all_correct) <= {0.5}, detail, t0, 5)


def test_criterion_08_regularizer_law():
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    equal_max = 0.0
    for _ in range(1000):
        v = rng.uniform(0.01, 10)
        beta = np.empty(N_PARAMS)
        for o, n in zip(OFFSETS, DIM_SIZES):
            z = rng.standard_normal(n)
            beta[o : o + n] = rng.normal() + math.sqrt(v) * (z - z.mean()) / z.std()
        equal_max = max(equal_max, variance_penalty(beta)[0])
    nonneg = True
    positive_when_unequal = True
    for _ in range(1000):
        beta = rng.standard_normal(N_PARAMS) * rng.uniform(0.1, 3, N_PARAMS)
        value = variance_penalty(beta)[0]
        var = [beta[o : o + n].var() for o, n in zip(OFFSETS, DIM_SIZES)]
        nonneg &= value >= 0
        positive_when_unequal &= value > 0 or max(var) - min(var) <= 1e-12
    ok = equal_max <= 1e-12 and nonneg and positive_when_unequal and variance_penalty(np.ones(N_PARAMS))[0] == 0.0
    report(8, ok, f"max penalty on equal-variance draws {equal_max:.1e}; 1000 random draws all >= 0: {nonneg}", t0, 5)


def test_criterion_09_mnl_consistency():
    t0 = time.perf_counter()
    theta = np.array([1.5, 2.0, -0.01, -0.011, -0.03])
    data = mnl_records(theta, 5000, seed=0)
    fit = mnl_fit(data).vector()
    rel = np.abs(fit / theta - 1)
    rng = np.random.default_rng(9)
    a = mnl_fit(data, init=rng.normal(0, 1, 5) * [1, 1, 0.01, 0.01, 0.01]).vector()
    b = mnl_fit(data, init=rng.normal(0, 1, 5) * [1, 1, 0.01, 0.01, 0.01]).vector()
    gap = float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-12)))
    ok = np.all(rel < 0.10) and gap < 1e-5
    report(9, ok, f"max relative error {rel.max():.3f} (beta_time {fit[2]:.5f}, beta_cost {fit[3]:.5f}); restart gap {gap:.1e}", t0, 30)


def test_criterion_10_metric_laws():
    t0 = time.perf_counter()
    rng = np.random.default_rng(10)
    P = rng.dirichlet(np.ones(3), 10_000)
    Q = rng.dirichlet(np.ones(3), 10_000)
    P[:50] = [[1, 0, 0]] * 50
    Q[50:100] = P[50:100]
    laws = True
    for p, q in zip(P, Q):
        d, e = js_divergence(p, q), js_divergence(q, p)
        laws &= d >= 0 and abs(d - e) <= 1e-12 and js_divergence(p, p) == 0.0
        laws &= (d == 0.0) == bool(np.array_equal(p, q))
    T, S, C = 1, 2, 3
    perfect = all(f1_scores([T, S, C, C], [T, S, C, C], w) == 1.0 for w in ("macro", "weighted_by_predicted"))
    truths, preds = [T, T, S, S, C, C], [T, S, S, S, C, C]
    hand = (abs(f1_scores(truths, preds, "macro") - 37 / 45) < 1e-12
            and abs(f1_scores(truths, preds, "weighted_by_predicted") - 38 / 45) < 1e-12)  # fmt: skip
    report(10, laws and perfect and hand, f"10000 pairs lawful={laws}; perfect F1=1: {perfect}; 6-record hand case: {hand}", t0, 10)


def _pipeline(root, data_path):
    common = ["--output-dir", str(root), "--seed", "42"]
    bundle = str(root / "split")
    basis = str(root / "personas" / "basis.jsonl")
    params = str(root / "train" / "params.jsonl")
    steps = [
        ["split", "--input", str(data_path)],
        ["infer-personas", "--bundle", bundle, "--date", "fixed"],
        ["train", "--bundle", bundle, "--basis", basis, "--max-iterations", "4"],
        ["predict", "--bundle", bundle, "--basis", basis, "--params", params],
        ["baseline", "mnl", "--bundle", bundle],
        ["baseline", "zero-shot", "--bundle", bundle],
        ["baseline", "few-shot", "--bundle", bundle],
        ["baseline", "same-group", "--bundle", bundle, "--basis", basis],
    ]
    for step in steps:
        assert main(common + step) == 0, step
    preds = [root / d / "predictions.jsonl" for d in ("predict", "baseline-mnl", "baseline-zero-shot", "baseline-few-shot",
                                                       "baseline-same-group")]  # fmt: skip
    assert main(common + ["compare", "--bundle", bundle] + [a for p in preds for a in ("--predictions", str(p))]) == 0
    return [root / "personas" / "basis.jsonl", root / "train" / "params.jsonl", *preds,
            root / "compare" / "report.json", root / "compare" / "report.txt"]  # fmt: skip


def test_criterion_11_end_to_end_determinism(tmp_path, swissmetro_path):
    t0 = time.perf_counter()
    a = _pipeline(tmp_path / "run_a", swissmetro_path)
    b = _pipeline(tmp_path / "run_b", swissmetro_path)
    same = [x.read_bytes() == y.read_bytes() for x, y in zip(a, b)]
    report(11, all(same), f"{sum(same)}/{len(same)} artifacts byte-identical (basis, params, 5 prediction sets, reports)", t0, 600)
