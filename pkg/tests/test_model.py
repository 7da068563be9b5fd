import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import logit

from hcf.features import features_for_grid
from hcf.model import (HcfModel, ProbabilityMatrix, activation_probability, check_concavity, combine,
                       gradient, influence_probability, lipschitz_bound, load_model, log_likelihood,
                       probability_matrix, read_pmat_csv, sample_complexity_bound, save_model,
                       write_pmat_csv)
from hcf.samples import SampleSet

from conftest import make_features, random_features
from oracles import bernoulli_union, central_difference, naive_loglik

fs = frozenset
# frozen from a 50-digit mpmath evaluation
LOGISTIC_025 = 0.56217650088579810402
LIPSCHITZ_V3 = 62.169797510839233468
SAMPLE_BOUND_REF = 44886276769  # eps=0.1, delta=0.05, d=25, V=5, lambda=1e-9, B=10
LOG_075 = -0.28768207245178092744
LOG_025 = -1.3862943611198906188


def test_influence_probability_values():
    assert influence_probability(HcfModel(np.zeros(3)), [0.3, -1, 1]) == 0.5
    m = HcfModel([-10.0, -10.0, -10.0])
    assert influence_probability(m, [1.0, 1.0, 1.0]) == 1e-9
    assert influence_probability(HcfModel([60.0], bound_B=100), [1.0]) == 1 - 1e-9
    assert influence_probability(HcfModel([1.0, -1.0]), [0.5, 0.25]) == pytest.approx(LOGISTIC_025, abs=1e-12)
    with pytest.raises(ValueError):
        influence_probability(HcfModel([1.0, -1.0]), [0.5])


def test_model_validation():
    with pytest.raises(ValueError):
        HcfModel([11.0])
    with pytest.raises(ValueError):
        HcfModel([0.0], lam=0.5)
    with pytest.raises(ValueError):
        HcfModel([0.0], bound_B=0)
    m = HcfModel([1.0])
    with pytest.raises(ValueError):
        m.theta[0] = 2.0


def test_probability_matrix(triangle):
    feats, spec = features_for_grid(triangle)
    pm = probability_matrix(HcfModel(np.zeros(spec.d), spec), feats)
    off = ~np.eye(3, dtype=bool)
    assert np.all(pm.p[off] == 0.5) and np.all(np.diag(pm.p) == 0)
    theta = np.linspace(-1, 1, spec.d)
    pm = probability_matrix(HcfModel(theta, spec), feats)
    for u in (1, 2, 3):
        for v in (1, 2, 3):
            if u != v:
                z = float(np.dot(theta, feats.pair(u, v)))
                assert pm[u, v] == pytest.approx(1 / (1 + math.exp(-z)), abs=1e-15)


def test_export_threshold(tmp_path):
    p = np.array([[0, 0.009999, 0.01], [0.5, 0, 0.0], [0.02, 0.001, 0]])
    pm = ProbabilityMatrix((4, 5, 6), p)
    kept = {(u, v) for u, v, _ in pm.triplets(0.01)}
    assert kept == {(4, 6), (5, 4), (6, 4)}
    write_pmat_csv(pm, tmp_path / "full.csv")
    assert np.array_equal(read_pmat_csv(tmp_path / "full.csv").p, pm.p)
    write_pmat_csv(pm, tmp_path / "cut.csv", threshold=0.01)
    cut = read_pmat_csv(tmp_path / "cut.csv").p
    assert cut[0, 1] == 0 and cut[0, 2] == 0.01


def test_activation_probability_examples():
    f = make_features(np.zeros((4, 4, 1)))
    m = HcfModel([0.0])
    assert activation_probability(m, f, {1}, 2) == 0.5
    assert activation_probability(m, f, {1, 3}, 2) == 0.75
    assert combine([0.1, 0.2, 0.3]) == pytest.approx(0.496, abs=1e-15)
    assert bernoulli_union([0.1, 0.2, 0.3]) == pytest.approx(0.496, abs=1e-15)
    with pytest.raises(ValueError):
        activation_probability(m, f, set(), 2)
    with pytest.raises(ValueError):
        activation_probability(m, f, {2}, 2)


def two_activator_samples():
    f = make_features(np.zeros((3, 3, 1)))
    pos = SampleSet({(fs({1, 3}), 2, 1): 1})
    neg = SampleSet({(fs({1, 3}), 2, 0): 1})
    return f, pos, neg


def test_log_likelihood_examples(backend):
    f, pos, neg = two_activator_samples()
    m = HcfModel([0.0])
    assert log_likelihood(m, f, pos) == pytest.approx(LOG_075, abs=1e-12)
    assert log_likelihood(m, f, neg) == pytest.approx(LOG_025, abs=1e-12)
    assert log_likelihood(m, f, pos.merge(neg)) == pytest.approx((LOG_075 + LOG_025) / 2, abs=1e-12)
    with pytest.raises(ValueError):
        log_likelihood(m, f, SampleSet())


def test_gradient_examples(backend):
    x = np.zeros((2, 2, 2))
    x[0, 1] = [0.4, -0.6]
    f = make_features(x)
    g = gradient(HcfModel([0.0, 0.0]), f, SampleSet({(fs({1}), 2, 1): 1}))
    assert np.allclose(g, [0.2, -0.3], atol=1e-15)
    x[0, 1] = [1.0, 0.0]
    g = gradient(HcfModel([0.0, 0.0]), make_features(x), SampleSet({(fs({1}), 2, 0): 1}))
    assert np.allclose(g, [-0.5, 0.0], atol=1e-15)


def random_samples(rng, n, n_keys, vmax):
    counts = {}
    for _ in range(n_keys):
        k = int(rng.integers(1, vmax + 1))
        nodes = rng.choice(np.arange(1, n + 1), k + 1, replace=False)
        key = (fs(int(u) for u in nodes[1:]), int(nodes[0]), int(rng.integers(0, 2)))
        counts[key] = counts.get(key, 0) + int(rng.integers(1, 4))
    return SampleSet(counts)


def test_likelihood_matches_naive_loop(backend):
    rng = np.random.default_rng(1)
    for _ in range(30):
        n, d = int(rng.integers(3, 8)), int(rng.integers(1, 8))
        f = random_features(rng, n, d)
        s = random_samples(rng, n, 12, min(5, n - 1))
        m = HcfModel(rng.uniform(-3, 3, d), bound_B=3)
        x = {(f.line_ids[i], f.line_ids[j]): f.x[i, j] for i in range(n) for j in range(n)}
        assert log_likelihood(m, f, s) == pytest.approx(naive_loglik(m.theta, x, s, m.lam), abs=1e-12)


def test_gradient_matches_finite_differences(backend):
    rng = np.random.default_rng(2)
    for _ in range(40):
        n, d = int(rng.integers(3, 8)), int(rng.integers(1, 11))
        f = random_features(rng, n, d)
        s = random_samples(rng, n, 10, min(5, n - 1))
        theta = rng.uniform(-2, 2, d)
        m = HcfModel(theta)
        g = gradient(m, f, s)
        fd = central_difference(lambda t: log_likelihood(m.with_theta(t), f, s), theta)
        assert np.linalg.norm(g - fd) <= 1e-6 * max(np.linalg.norm(fd), 1e-3)


def test_gradient_zero_through_active_clamp():
    x = np.zeros((2, 2, 1))
    x[0, 1] = [1.0]
    f = make_features(x)
    s = SampleSet({(fs({1}), 2, 0): 1})
    assert gradient(HcfModel([-30.0], bound_B=50), f, s)[0] == 0.0


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 5), st.sampled_from([1e-9, 1e-4, 0.1]))
def test_per_sample_loglik_range(seed, V, lam):
    rng = np.random.default_rng(seed)
    n = V + 1
    f = make_features(rng.uniform(-1, 1, (n, n, 3)))
    m = HcfModel(rng.uniform(-10, 10, 3), lam=lam)
    acts = fs(range(2, n + 1))
    for label in (0, 1):
        ll = log_likelihood(m, f, SampleSet({(acts, 1, label): 1}))
        assert V * math.log(lam) - 1e-9 <= ll <= math.log(1 - lam ** V) + 1e-12


def test_concavity_examples():
    f = make_features(np.ones((3, 3, 1)))
    neg = SampleSet({(fs({1}), 2, 0): 4, (fs({1, 2}), 3, 0): 1})
    assert check_concavity(HcfModel([0.5]), f, neg).status == "guaranteed_concave"
    m = HcfModel([logit(0.8)])
    s = SampleSet({(fs({1}), 2, 1): 1, (fs({1}), 2, 0): 2})
    rep = check_concavity(m, f, s)
    assert rep.phi[(1, 2)] == pytest.approx(1 / 0.8 - 3, abs=1e-12)
    assert rep.status == "guaranteed_concave"
    leave_one_out = SampleSet({(fs({1, 2, 3}) - {u}, u, 1): 1 for u in (1, 2, 3)})
    rep = check_concavity(HcfModel([0.0]), f, leave_one_out)
    assert rep.status == "not_guaranteed"
    assert rep.phi[(2, 1)] == pytest.approx(1 / 0.75 - 1, abs=1e-12)


def test_lipschitz_values():
    assert lipschitz_bound(1, math.exp(-1)) == pytest.approx(1.0, abs=1e-15)
    assert lipschitz_bound(3, 1e-9) == pytest.approx(LIPSCHITZ_V3, abs=1e-10)
    s = SampleSet({(fs({1, 2}), 3, 1): 1})
    assert lipschitz_bound(s, 1e-9) == pytest.approx(2 * 9 * math.log(10), rel=1e-15)
    with pytest.raises(ValueError):
        lipschitz_bound(1, 0.7)


def test_sample_complexity_reference():
    assert sample_complexity_bound(0.1, 0.05, 25, 5, 1e-9, 10) == SAMPLE_BOUND_REF
    with pytest.raises(ValueError):
        sample_complexity_bound(1.5, 0.05, 25, 5, 1e-9, 10)


def test_sample_complexity_scaling():
    for eps in (0.5, 0.1, 0.02):
        assert sample_complexity_bound(eps / 2, 0.05, 25, 5, 1e-9, 10) >= \
            4 * sample_complexity_bound(eps, 0.05, 25, 5, 1e-9, 10)
    for args in ((0.1, 0.05, 25, 5), (0.3, 0.2, 3, 1)):
        eps, delta, d, V = args
        base = sample_complexity_bound(eps, delta, d, V, 1e-9, 10)
        assert sample_complexity_bound(eps, delta, d + 1, V, 1e-9, 10) >= base
        assert sample_complexity_bound(eps, delta, d, V + 1, 1e-9, 10) >= base


def test_model_file_round_trip(tmp_path, triangle):
    feats, spec = features_for_grid(triangle)
    m = HcfModel(np.linspace(-2, 2, spec.d), spec, lam=1e-6, bound_B=4)
    save_model(m, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    assert np.array_equal(back.theta, m.theta)
    assert back.spec == spec and back.lam == m.lam and back.bound_B == m.bound_B
