"""End-to-end acceptance checks; each prints one PASS/FAIL line."""
import itertools
import math
import time

import numpy as np
import pytest

from hcf.dcsim import conservation_residual, generate_dataset, sample_initial_outages, solve_dc_flow
from hcf.diffusion import (celf_top_k, estimate_spread, exact_evaluator, exact_spread, greedy_top_k,
                           simulate_cascades)
from hcf.features import FeatureSpec, features_for_grid
from hcf.metrics import distribution_error, failure_distribution, probability_error
from hcf.model import (HcfModel, ProbabilityMatrix, activation_probability, check_concavity,
                       gradient, lipschitz_bound, log_likelihood, probability_matrix,
                       sample_complexity_bound)
from hcf.optimizer import OptimizerConfig, maximize_likelihood
from hcf.samples import SampleSet, compile_samples, covering_probability, encode_cascades
from hcf.synthetic import synthetic_grid

from conftest import make_features, random_features
from oracles import central_difference, dense_dc_flow, fd_hessian
from test_dcsim import random_grid

fs = frozenset


def bernoulli_table(ps):
    """Sum of outcome probabilities with at least one success, over all 2^k outcomes."""
    ps = np.asarray(ps)
    outcomes = np.array(list(itertools.product((0, 1), repeat=ps.size)), dtype=bool)
    w = np.where(outcomes, ps, 1.0 - ps).prod(axis=1)
    return float(w[outcomes.any(axis=1)].sum())


def random_sample_set(rng, n, n_keys, vmax):
    counts = {}
    for _ in range(n_keys):
        k = int(rng.integers(1, vmax + 1))
        nodes = rng.choice(np.arange(1, n + 1), k + 1, replace=False)
        key = (fs(int(u) for u in nodes[1:]), int(nodes[0]), int(rng.integers(0, 2)))
        counts[key] = counts.get(key, 0) + int(rng.integers(1, 4))
    return SampleSet(counts)


def test_gradient_matches_finite_differences(record):
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    worst, done, skipped = 0.0, 0, 0
    while done < 200:
        n, d = int(rng.integers(6, 11)), int(rng.integers(1, 26))
        f = random_features(rng, n, d)
        s = random_sample_set(rng, n, 15, 5)
        B = 2.0
        theta = rng.uniform(-B, B, d)
        z = f.flat() @ theta
        if np.any(np.abs(z) > 20.0):  # stay clear of the probability clamps
            skipped += 1
            continue
        m = HcfModel(theta, bound_B=B)
        g = gradient(m, f, s)
        fd = central_difference(lambda t: log_likelihood(m.with_theta(t), f, s), theta, h=1e-5)
        worst = max(worst, np.linalg.norm(g - fd) / np.linalg.norm(fd))
        done += 1
    elapsed = time.perf_counter() - start
    ok = worst < 1e-6 and elapsed < 10
    record(1, ok, f"gradient vs central differences: max rel err {worst:.2e} (<1e-6), "
                  f"{done} instances in {elapsed:.1f}s (<10s), {skipped} clamped draws redrawn")
    assert ok


def test_activation_probability_matches_enumeration(record):
    rng = np.random.default_rng(102)
    worst = 0.0
    for _ in range(1000):
        k = int(rng.integers(1, 11))
        n = k + 1
        f = random_features(rng, n, 3)
        m = HcfModel(rng.uniform(-3, 3, 3))
        acts = set(range(2, n + 1))
        pm = probability_matrix(m, f)
        ps = [pm[u, 1] for u in acts]
        worst = max(worst, abs(activation_probability(m, f, acts, 1) - bernoulli_table(ps)))
    ok = worst < 1e-12
    record(2, ok, f"activation probability vs Bernoulli enumeration: max abs err {worst:.1e} (<1e-12), 1000 instances")
    assert ok


def test_dc_flow_matches_dense_oracle(record):
    rng = np.random.default_rng(103)
    worst_flow = worst_cons = 0.0
    islanded = 0
    for _ in range(100):
        g = random_grid(rng)
        k = int(rng.integers(0, min(5, len(g.lines)) + 1))
        outages = set(int(x) for x in rng.choice(g.line_ids, k, replace=False))
        st = solve_dc_flow(g, outages)
        theta, flows, _ = dense_dc_flow(g, outages)
        worst_flow = max(worst_flow, float(np.max(np.abs(st.line_flows - [flows[l] for l in g.line_ids]))),
                         float(np.max(np.abs(st.bus_angles - theta))))
        worst_cons = max(worst_cons, conservation_residual(g, st))
        islanded += len(st.islands) > 1
    ok = worst_flow < 1e-9 and worst_cons < 1e-9 and islanded >= 10
    record(3, ok, f"DC flow vs dense oracle: max diff {worst_flow:.1e}, conservation {worst_cons:.1e} "
                  f"(<1e-9), 100 grids of which {islanded} islanded")
    assert ok


PLANTED_SPEC = FeatureSpec(("loading", "betweenness", "endpoint_degree", "capacity"),
                           ("shared_bus", "line_distance"))
PLANTED_THETA = np.array([-2.0, -0.5, 1.0, 2.0, -1.5, 0.0, 0.5, 2.0, 2.0, 2.0])


def test_planted_model_recovery(record):
    start = time.perf_counter()
    grid = synthetic_grid()
    feats, spec = features_for_grid(grid, PLANTED_SPEC)
    assert feats.n == 30 and spec.d == 10
    planted = probability_matrix(HcfModel(PLANTED_THETA, spec), feats)
    rng = np.random.default_rng(104)
    seeds = [sorted(sample_initial_outages(rng, feats.line_ids, 1 / 30)) for _ in range(5000)]
    train = simulate_cascades(planted, seeds, rng_seed=1)
    samples = encode_cascades(train, feats.line_ids)
    model, _ = maximize_likelihood(samples, feats, HcfModel(np.zeros(10), spec), OptimizerConfig())
    learned = probability_matrix(model, feats)
    mae = probability_error(learned, planted, "absolute")
    uni = feats.line_ids
    from_learned = failure_distribution(simulate_cascades(learned, seeds, rng_seed=2), universe=uni)
    from_planted = failure_distribution(simulate_cascades(planted, seeds, rng_seed=3), universe=uni)
    de = distribution_error(from_learned, from_planted, "relative")
    de_all = distribution_error(from_learned, from_planted, "relative", None)
    elapsed = time.perf_counter() - start
    sizes = np.mean([t.size for t in train])
    ok = mae < 0.05 and de < 0.1 and elapsed < 300
    record(4, ok, f"planted recovery: prob MAE {mae:.4f} (<0.05), relative DE top-5% {de:.4f} (<0.1; "
                  f"all lines {de_all:.4f}), 5000 cascades of mean size {sizes:.1f}, {elapsed:.0f}s (<300s)")
    assert ok


def _fit(grid, spec, n_runs, seed):
    feats, spec = features_for_grid(grid, spec)
    traces = generate_dataset(grid, n_runs, 1 / 30, seed)
    samples = encode_cascades(traces, feats.line_ids)
    model, _ = maximize_likelihood(samples, feats, HcfModel(np.zeros(feats.d), spec),
                                   OptimizerConfig(restarts=1))
    return model, feats, spec


def test_transfer_to_perturbed_demand(record):
    base = synthetic_grid()
    pert = base.with_demand_factor(1.1, follow_generation=True)
    base_model, _, base_spec = _fit(base, None, 2000, 1)
    own_model, own_feats, _ = _fit(pert, None, 2000, 2)
    frozen_feats, _ = features_for_grid(pert, base_spec)
    test = generate_dataset(pert, 2000, 1 / 30, 3)
    seeds = [sorted(t.generations[0]) for t in test]
    data = failure_distribution(test, universe=pert.line_ids)

    def de(model, feats):
        sim = simulate_cascades(probability_matrix(model, feats), seeds, rng_seed=4)
        return distribution_error(failure_distribution(sim, universe=pert.line_ids), data, "relative")

    transfer, retrain = de(base_model, frozen_feats), de(own_model, own_feats)
    ok = transfer <= 2 * retrain
    record(5, ok, f"transfer: relative DE transferred {transfer:.4f} vs retrained {retrain:.4f} "
                  f"(ratio {transfer / retrain:.2f}, need <=2)")
    assert ok


def _random_pmat(rng, n, density):
    p = rng.uniform(0.05, 0.95, (n, n)) * (rng.random((n, n)) < density)
    np.fill_diagonal(p, 0)
    return ProbabilityMatrix(tuple(range(1, n + 1)), p)


def test_celf_equals_naive_greedy(record):
    rng = np.random.default_rng(106)
    mismatches = 0
    for _ in range(50):
        m = _random_pmat(rng, int(rng.integers(3, 9)), rng.uniform(0.15, 0.6))
        ev = exact_evaluator(m)
        for k in (1, 2, 3):
            if {l for l, _ in celf_top_k(m, k, evaluator=ev)} != {l for l, _ in greedy_top_k(m, k, ev)}:
                mismatches += 1
    ok = mismatches == 0
    record(6, ok, f"CELF vs naive greedy with exact spread: {mismatches} mismatches in 150 (50 instances x 3 k)")
    assert ok


def test_monte_carlo_spread_within_three_sigma(record):
    rng = np.random.default_rng(107)
    worst = 0.0
    outside = 0
    for i in range(50):
        n = int(rng.integers(2, 11))
        m = _random_pmat(rng, n, rng.uniform(0.1, 0.5))
        seeds = set(int(s) for s in rng.choice(np.arange(1, n + 1), int(rng.integers(1, 3)), replace=False))
        mean, se = estimate_spread(m, seeds, n_runs=100_000, rng_seed=i)
        exact = exact_spread(m, seeds)
        z = abs(mean - exact) / se if se > 0 else (0.0 if mean == exact else math.inf)
        worst = max(worst, z)
        outside += z > 3
    ok = outside == 0
    record(7, ok, f"MC spread vs exact: max |z| {worst:.2f} (<=3), {outside} of 50 outside 3 sigma, 1e5 runs each")
    assert ok


def test_mitigation_reduces_mean_size(record):
    grid = synthetic_grid()
    model, feats, _ = _fit(grid, None, 2000, 1)
    top = [l for l, _ in celf_top_k(probability_matrix(model, feats), 5, n_runs=10_000, rng_seed=0)]
    before = generate_dataset(grid, 3000, 1 / 30, 3)
    after = generate_dataset(grid.with_capacity_factor(top, 2.0), 3000, 1 / 30, 3)
    mb = np.mean([t.size for t in before])
    ma = np.mean([t.size for t in after])
    ok = ma < mb
    record(8, ok, f"mitigation: doubling capacity of CELF top-5 {top} changes mean cascade size "
                  f"{mb:.3f} -> {ma:.3f} ({100 * (ma - mb) / mb:+.2f}%), strict decrease required")
    assert ok


def test_theory_utilities(record):
    p_cover, _ = covering_probability(1000, 21000)
    rng = np.random.default_rng(109)
    worst_ratio = 0.0
    for _ in range(1000):
        V = int(rng.integers(1, 6))
        d = int(rng.integers(1, 11))
        lam = float(10 ** rng.uniform(-12, -1))
        f = random_features(rng, V + 1, d)
        s = SampleSet({(fs(range(2, V + 2)), 1, int(rng.integers(0, 2))): 1})
        m = HcfModel(rng.uniform(-10, 10, d), lam=lam)
        g = gradient(m, f, s)
        worst_ratio = max(worst_ratio, np.abs(g).max() / lipschitz_bound(s, lam))
    monotone = True
    grid_vals = dict(eps=(0.3, 0.1, 0.03), delta=(0.2, 0.05, 0.01), d=(1, 5, 25, 100), V=(1, 3, 10))
    for eps, delta, d, V in itertools.product(*grid_vals.values()):
        m0 = sample_complexity_bound(eps, delta, d, V, 1e-9, 10)
        monotone &= sample_complexity_bound(eps, delta, d + 1, V, 1e-9, 10) >= m0
        monotone &= sample_complexity_bound(eps, delta, d, V + 1, 1e-9, 10) >= m0
        monotone &= sample_complexity_bound(eps * 0.9, delta, d, V, 1e-9, 10) >= m0
        monotone &= sample_complexity_bound(eps, delta * 0.9, d, V, 1e-9, 10) >= m0
    ok = p_cover >= 1 - 1e-6 and worst_ratio <= 1.0 and monotone
    record(9, ok, f"theory: covering(1000, 21000) = {p_cover:.9f} (>=1-1e-6), max |grad|_inf / bound "
                  f"{worst_ratio:.3f} (<=1) over 1000 draws, sample bound monotone: {monotone}")
    assert ok


def test_concavity_diagnostics(record):
    rng = np.random.default_rng(110)
    worst_eig = -math.inf
    all_flagged = True
    for _ in range(50):
        n, d = int(rng.integers(3, 7)), int(rng.integers(1, 6))
        f = random_features(rng, n, d)
        negatives = {}
        for (a, t, _), c in random_sample_set(rng, n, 12, min(4, n - 1)).counts.items():
            negatives[(a, t, 0)] = negatives.get((a, t, 0), 0) + c
        s = SampleSet(negatives)
        m = HcfModel(rng.uniform(-2, 2, d), bound_B=2)
        all_flagged &= check_concavity(m, f, s).status == "guaranteed_concave"
        cs = compile_samples(s, f.line_ids)
        H = fd_hessian(lambda t: gradient(m.with_theta(t), f, cs), m.theta.copy())
        worst_eig = max(worst_eig, float(np.linalg.eigvalsh(H).max()))
    loo = SampleSet({(fs({1, 2, 3}) - {u}, u, 1): 1 for u in (1, 2, 3)})
    loo_status = check_concavity(HcfModel([0.0]), make_features(np.ones((3, 3, 1))), loo).status
    ok = all_flagged and worst_eig <= 1e-8 and loo_status == "not_guaranteed"
    record(10, ok, f"concavity: all-negative sets flagged concave: {all_flagged}, max Hessian eigenvalue "
                   f"{worst_eig:.1e} (<=1e-8); leave-one-out positives -> {loo_status}")
    assert ok
