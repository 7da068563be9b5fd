"""Hyperparametric IC likelihood: pair probabilities, log-likelihood, gradient,
and the learnability diagnostics (concavity check, Lipschitz and sample bounds)."""
import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import kernels
from .features import FeatureSpec
from .samples import CompiledSamples, SampleSet, compile_samples

DEFAULT_LAMBDA = 1e-9
DEFAULT_B = 10.0
DEFAULT_EXPORT_THRESHOLD = 0.01


@dataclass(frozen=True)
class HcfModel:
    theta: np.ndarray
    spec: FeatureSpec = None
    lam: float = DEFAULT_LAMBDA
    bound_B: float = DEFAULT_B

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float).ravel()
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        if not 0 < self.lam < 0.5:
            raise ValueError("lambda must lie in (0, 0.5)")
        if not self.bound_B > 0:
            raise ValueError("B must be positive")
        if np.any(np.abs(theta) > self.bound_B):
            raise ValueError("theta lies outside [-B, B]^d")
        if self.spec is not None and self.spec.d != theta.size:
            raise ValueError(f"theta has {theta.size} entries, feature spec has d={self.spec.d}")

    @property
    def d(self):
        return self.theta.size

    def with_theta(self, theta):
        return HcfModel(theta, self.spec, self.lam, self.bound_B)

    def to_json(self):
        return {
            "theta": [float(t) for t in self.theta],
            "feature_spec": self.spec.to_json() if self.spec is not None else None,
            "lambda": self.lam,
            "B": self.bound_B,
        }

    @classmethod
    def from_json(cls, obj):
        spec = FeatureSpec.from_json(obj["feature_spec"]) if obj.get("feature_spec") else None
        return cls(np.array(obj["theta"], dtype=float), spec, float(obj["lambda"]), float(obj["B"]))


def save_model(model, path):
    Path(path).write_text(json.dumps(model.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_model(path):
    return HcfModel.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class ProbabilityMatrix:
    """p[i, j] = influence probability from line_ids[i] to line_ids[j]; zero diagonal."""
    line_ids: tuple
    p: np.ndarray

    def __post_init__(self):
        p = np.array(self.p, dtype=float)
        n = len(self.line_ids)
        if p.shape != (n, n):
            raise ValueError(f"probability matrix shape {p.shape} does not match {n} lines")
        if np.any((p < 0) | (p > 1)) or not np.all(np.isfinite(p)):
            raise ValueError("probabilities must lie in [0, 1]")
        np.fill_diagonal(p, 0.0)
        p.setflags(write=False)
        object.__setattr__(self, "line_ids", tuple(self.line_ids))
        object.__setattr__(self, "p", p)

    @property
    def n(self):
        return len(self.line_ids)

    def index(self, line_id):
        return self.line_ids.index(line_id)

    def __getitem__(self, uv):
        u, v = uv
        return float(self.p[self.index(u), self.index(v)])

    def triplets(self, threshold=None):
        rows = []
        for i, u in enumerate(self.line_ids):
            for j, v in enumerate(self.line_ids):
                if i != j and (threshold is None or self.p[i, j] >= threshold):
                    rows.append((u, v, float(self.p[i, j])))
        return rows


def write_pmat_csv(pmat, path, threshold=None):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["u", "v", "p"])
        for u, v, p in pmat.triplets(threshold):
            w.writerow([u, v, repr(p)])


def read_pmat_csv(path):
    """Read triplets; pairs absent from the file (e.g. filtered out) get p = 0."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        next(r)
        rows = [(int(u), int(v), float(p)) for u, v, p in r]
    ids = tuple(sorted({u for u, _, _ in rows} | {v for _, v, _ in rows}))
    pos = {lid: i for i, lid in enumerate(ids)}
    p = np.zeros((len(ids), len(ids)))
    for u, v, val in rows:
        p[pos[u], pos[v]] = val
    return ProbabilityMatrix(ids, p)


def _check_dim(model, d):
    if d != model.d:
        raise ValueError(f"feature dimension {d} does not match model dimension {model.d}")


def _clamped(z, lam):
    p = expit(z)
    free = (p > lam) & (p < 1.0 - lam)
    return np.clip(p, lam, 1.0 - lam), free


def influence_probability(model, x_uv):
    x = np.asarray(x_uv, dtype=float).ravel()
    _check_dim(model, x.size)
    p, _ = _clamped(np.dot(model.theta, x), model.lam)
    return float(p)


def probability_matrix(model, features):
    _check_dim(model, features.d)
    z = features.flat() @ model.theta
    p, _ = _clamped(z, model.lam)
    p = p.reshape(features.n, features.n)
    return ProbabilityMatrix(features.line_ids, p)


def combine(ps):
    """1 - prod(1 - p): probability that at least one independent trial succeeds."""
    ps = np.asarray(ps, dtype=float)
    return float(-np.expm1(np.sum(np.log1p(-ps))))


def activation_probability(model, features, activators, target):
    activators = set(activators)
    if not activators:
        raise ValueError("activators must be non-empty")
    if target in activators:
        raise ValueError("target must not be an activator")
    pm = probability_matrix(model, features)
    v = pm.index(target)
    return combine([pm.p[pm.index(u), v] for u in activators])


def _compiled(samples, features):
    if isinstance(samples, CompiledSamples):
        if samples.n != features.n:
            raise ValueError("compiled samples were built for a different line set")
        return samples
    if isinstance(samples, SampleSet):
        return compile_samples(samples, features.line_ids)
    raise TypeError("samples must be a SampleSet or CompiledSamples")


def loglik_and_grad(theta, X, cs, lam):
    """Mean log-likelihood and its gradient for flat features ``X`` (n*n, d)."""
    p, free = _clamped(X @ theta, lam)
    ll, coef = kernels.loglik_coef(p, free, cs.indptr, cs.pair_idx, cs.npos, cs.nneg, lam)
    return ll / cs.m, (X.T @ coef) / cs.m


def log_likelihood(model, features, samples):
    _check_dim(model, features.d)
    cs = _compiled(samples, features)
    if cs.m == 0:
        raise ValueError("sample set is empty")
    return loglik_and_grad(model.theta, features.flat(), cs, model.lam)[0]


def gradient(model, features, samples):
    _check_dim(model, features.d)
    cs = _compiled(samples, features)
    if cs.m == 0:
        raise ValueError("sample set is empty")
    return loglik_and_grad(model.theta, features.flat(), cs, model.lam)[1]


@dataclass(frozen=True)
class ConcavityReport:
    status: str               # "guaranteed_concave" or "not_guaranteed"
    phi: dict                 # (u, v) -> phi_uv for every covered pair
    positive_pairs: frozenset  # pairs covered by at least one positive sample

    @property
    def max_phi(self):
        vals = [self.phi[k] for k in self.positive_pairs]
        return max(vals) if vals else None


def check_concavity(model, features, samples):
    """Sufficient concavity test at the model's theta.

    phi_uv = sum over positives covering uv of 1/P_s, minus the number of
    samples covering uv.  All phi_uv <= 0 on positively covered pairs
    guarantees a concave objective; otherwise nothing is claimed.
    """
    _check_dim(model, features.d)
    cs = _compiled(samples, features)
    n = features.n
    p, _ = _clamped(features.flat() @ model.theta, model.lam)
    lens = np.diff(cs.indptr)
    if lens.size == 0:
        return ConcavityReport("guaranteed_concave", {}, frozenset())
    logq = np.add.reduceat(np.log1p(-p[cs.pair_idx]), cs.indptr[:-1])
    P = np.clip(-np.expm1(logq), model.lam, 1.0 - model.lam ** lens)
    weighted = np.bincount(cs.pair_idx, np.repeat(cs.npos / P, lens), minlength=n * n)
    covered = np.bincount(cs.pair_idx, np.repeat(cs.npos + cs.nneg, lens), minlength=n * n)
    pos_cov = np.bincount(cs.pair_idx, np.repeat(cs.npos, lens), minlength=n * n)
    phi = weighted - covered
    ids = features.line_ids
    report = {(ids[k // n], ids[k % n]): float(phi[k]) for k in np.flatnonzero(covered)}
    positive = frozenset((ids[k // n], ids[k % n]) for k in np.flatnonzero(pos_cov))
    ok = all(report[k] <= 0.0 for k in positive)
    return ConcavityReport("guaranteed_concave" if ok else "not_guaranteed", report, positive)


def lipschitz_bound(samples, lam):
    """V log(1/lambda): sup-norm Lipschitz constant of the per-sample log-likelihood.

    ``samples`` may be a SampleSet or the maximum activator-set size V.
    """
    if not 0 < lam < 0.5:
        raise ValueError("lambda must lie in (0, 0.5)")
    V = samples if isinstance(samples, (int, np.integer)) else samples.V
    return V * math.log(1.0 / lam)


def sample_complexity_bound(epsilon, delta, d, V, lam, B):
    """Samples sufficient for an epsilon-optimal MLE with probability 1 - delta."""
    if not (0 < epsilon < 1 and 0 < delta < 1):
        raise ValueError("epsilon and delta must lie in (0, 1)")
    if not (d >= 1 and V >= 1 and B > 0 and 0 < lam < 0.5):
        raise ValueError("need d >= 1, V >= 1, B > 0 and lambda in (0, 0.5)")
    L = math.log(1.0 / lam)
    cover = math.ceil(3.0 * B * V * L / epsilon)
    m = (6.0 * V * L / epsilon) ** 2 * (4.0 * d * math.log(cover) + 25.0 * math.log(8.0 / delta))
    return math.ceil(m)
