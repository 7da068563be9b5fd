"""Box-constrained limited-memory BFGS for the maximum-likelihood estimate."""
from collections import deque
from dataclasses import asdict, dataclass, field

import numpy as np

from .kernels import pmap
from .model import _check_dim, _compiled, loglik_and_grad

_ARMIJO = 1e-4
_MIN_STEP = 1e-20


@dataclass(frozen=True)
class OptimizerConfig:
    memory: int = 10
    max_iters: int = 500
    grad_tol: float = 1e-6
    f_tol: float = 1e-10
    restarts: int = 3
    rng_seed: int = 0

    def __post_init__(self):
        if self.memory < 1:
            raise ValueError("memory must be >= 1")
        if not (self.grad_tol > 0 and self.f_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.max_iters < 0 or self.restarts < 0:
            raise ValueError("max_iters and restarts must be >= 0")


@dataclass
class StartResult:
    start: int
    theta: list
    log_likelihood: float
    iterations: int
    evaluations: int
    grad_inf_norm: float
    converged: bool
    reason: str
    trajectory: list = field(default_factory=list, repr=False)


@dataclass
class ConvergenceReport:
    best_start: int
    log_likelihood: float
    iterations: int
    grad_inf_norm: float
    converged: bool
    reason: str
    active_bounds: list
    starts: list

    def to_json(self):
        out = asdict(self)
        for s in out["starts"]:
            s.pop("trajectory", None)
        return out


def projected_gradient(x, g, lo, hi):
    """Components of -g that can move x while staying in the box."""
    return x - np.clip(x - g, lo, hi)


def _direction(g, free, S, Y):
    """Two-loop recursion restricted to the free variables."""
    q = np.where(free, g, 0.0)
    hist = []
    for s, y in zip(S, Y):
        s, y = np.where(free, s, 0.0), np.where(free, y, 0.0)
        sy = s @ y
        if sy > 1e-12 * max(y @ y, 1e-300):
            hist.append((s, y, 1.0 / sy))
    alphas = []
    for s, y, rho in reversed(hist):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    if hist:
        s, y, _ = hist[-1]
        q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(hist, reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return -q


def minimize_box(fg, x0, lo, hi, memory=10, max_iters=500, grad_tol=1e-6, f_tol=1e-10):
    """Minimize ``fg(x) -> (f, grad)`` over the box [lo, hi].

    Returns ``(x, f, info)``; ``info['trajectory']`` lists accepted f values,
    which never increase.
    """
    x = np.clip(np.asarray(x0, dtype=float), lo, hi)
    f, g = fg(x)
    evals = 1
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise FloatingPointError("objective is not finite at the starting point")
    S, Y = deque(maxlen=memory), deque(maxlen=memory)
    traj = [f]
    reason = "max_iters"
    it = 0
    for it in range(1, max_iters + 1):
        pg = projected_gradient(x, g, lo, hi)
        if np.max(np.abs(pg), initial=0.0) <= grad_tol:
            reason, it = "grad_tol", it - 1
            break
        at_lo = (x <= lo) & (g > 0)
        at_hi = (x >= hi) & (g < 0)
        free = ~(at_lo | at_hi)
        d = _direction(g, free, S, Y)
        if not (g @ d < 0):
            d = -np.where(free, g, 0.0)
            S.clear()
            Y.clear()
        step = 1.0 if S else min(1.0, 1.0 / max(np.max(np.abs(d)), 1e-300))
        accepted = False
        for attempt in range(2):
            a = step
            while a >= _MIN_STEP:
                xn = np.clip(x + a * d, lo, hi)
                dx = xn - x
                slope = g @ dx
                if slope >= 0:
                    a *= 0.5
                    continue
                fn, gn = fg(xn)
                evals += 1
                if np.isfinite(fn) and fn <= f + _ARMIJO * slope:
                    accepted = True
                    break
                a *= 0.5
            if accepted or attempt == 1:
                break
            # quasi-Newton step failed: fall back to projected steepest descent
            d = -np.where(free, g, 0.0)
            S.clear()
            Y.clear()
            step = min(1.0, 1.0 / max(np.max(np.abs(d)), 1e-300))
        if not accepted:
            reason, it = "line_search", it - 1
            break
        s, y = xn - x, gn - g
        if s @ y > 1e-12 * max(y @ y, 1e-300):
            S.append(s)
            Y.append(y)
        small = (f - fn) <= f_tol * max(abs(f), abs(fn), 1.0)
        x, f, g = xn, fn, gn
        traj.append(f)
        if small:
            reason = "f_tol"
            break
    pg = projected_gradient(x, g, lo, hi)
    info = {
        "iterations": it,
        "evaluations": evals,
        "grad_inf_norm": float(np.max(np.abs(pg), initial=0.0)),
        "reason": reason,
        "converged": reason in ("grad_tol", "f_tol"),
        "trajectory": traj,
    }
    return x, f, info


def maximize_likelihood(samples, features, init, config=OptimizerConfig()):
    """Multi-start maximization of the mean log-likelihood over [-B, B]^d.

    Start 0 is ``init.theta``; the others are uniform in the box, drawn from
    ``config.rng_seed``.  Returns the best model and a ConvergenceReport.
    """
    _check_dim(init, features.d)
    cs = _compiled(samples, features)
    if cs.m == 0:
        raise ValueError("sample set is empty")
    X = features.flat()
    B, lam = init.bound_B, init.lam
    lo, hi = np.full(init.d, -B), np.full(init.d, B)

    def fg(theta):
        ll, g = loglik_and_grad(theta, X, cs, lam)
        return -ll, -g

    f0, _ = fg(init.theta)
    if not np.isfinite(f0):
        raise FloatingPointError("log-likelihood is not finite at the initial theta")

    rng = np.random.default_rng(config.rng_seed)
    starts = [np.array(init.theta)] + [rng.uniform(-B, B, init.d) for _ in range(config.restarts)]

    def run(k):
        x, f, info = minimize_box(fg, starts[k], lo, hi, config.memory, config.max_iters,
                                  config.grad_tol, config.f_tol)
        return StartResult(k, [float(v) for v in x], -float(f), info["iterations"],
                           info["evaluations"], info["grad_inf_norm"], info["converged"],
                           info["reason"], [-v for v in info["trajectory"]])

    results = pmap(run, range(len(starts)))
    best = max(results, key=lambda r: (r.log_likelihood, -r.start))
    theta = np.clip(np.array(best.theta), -B, B)
    active = [int(i) for i in np.flatnonzero((theta <= -B) | (theta >= B))]
    report = ConvergenceReport(
        best_start=best.start,
        log_likelihood=best.log_likelihood,
        iterations=best.iterations,
        grad_inf_norm=best.grad_inf_norm,
        converged=best.converged,
        reason=best.reason,
        active_bounds=active,
        starts=results,
    )
    return init.with_theta(theta), report
