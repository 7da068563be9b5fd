"""Pure numpy implementations of the hot kernels.

These are the reference versions.  ``_ckernels.pyx`` must reproduce
``ic_times`` / ``ic_sizes`` bit for bit and ``loglik_coef`` to rounding.
"""
import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_UNIT = 1.0 / 9007199254740992.0  # 2**-53

# caps the (frontier rows x n) uniform block per IC step
_BLOCK = 1 << 21


def splitmix64(z):
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = z + _GOLDEN
        z = (z ^ (z >> _S30)) * _MIX1
        z = (z ^ (z >> _S27)) * _MIX2
    return z ^ (z >> _S31)


def run_bases(key, runs):
    """Per-run stream offsets: splitmix64(key ^ splitmix64(run))."""
    runs = np.asarray(runs, dtype=np.uint64)
    return splitmix64(np.uint64(key) ^ splitmix64(runs))


def edge_uniforms(bases, counters):
    """Uniforms in [0, 1) for counter values added to per-row bases."""
    with np.errstate(over="ignore"):
        h = splitmix64(bases + counters)
    return (h >> _S11).astype(np.float64) * _UNIT


def ic_times(p, seed_indptr, seed_idx, key, runs):
    """Activation step of every node in every run (-1 = never active).

    Row ``i`` starts from seeds ``seed_idx[seed_indptr[i]:seed_indptr[i+1]]``
    and draws its edge trials from stream ``runs[i]``.  Edge ``u -> v`` is
    live in run ``r`` iff ``U(key, r, u*n + v) < p[u, v]``.
    """
    p = np.ascontiguousarray(p, dtype=np.float64)
    n = p.shape[0]
    runs = np.asarray(runs, dtype=np.uint64)
    R = runs.shape[0]
    times = np.full((R, n), -1, dtype=np.int32)
    if R == 0 or n == 0:
        return times
    seed_indptr = np.asarray(seed_indptr, dtype=np.intp)
    seed_idx = np.asarray(seed_idx, dtype=np.intp)
    rows = np.repeat(np.arange(R), np.diff(seed_indptr))
    times[rows, seed_idx] = 0

    bases = run_bases(key, runs)
    cols = np.arange(n, dtype=np.uint64)
    n64 = np.uint64(n)
    chunk = max(1, _BLOCK // n)

    fr, fu = np.nonzero(times == 0)
    t = 0
    while fr.size:
        t += 1
        hit = np.zeros((R, n), dtype=bool)
        for lo in range(0, fr.size, chunk):
            r = fr[lo:lo + chunk]
            u = fu[lo:lo + chunk]
            ctr = (u.astype(np.uint64) * n64)[:, None] + cols[None, :]
            live = edge_uniforms(bases[r][:, None], ctr) < p[u]
            # rows of one run are contiguous because nonzero() is row-major
            starts = np.flatnonzero(np.r_[True, r[1:] != r[:-1]])
            hit[r[starts]] |= np.logical_or.reduceat(live, starts, axis=0)
        new = hit & (times < 0)
        times[new] = t
        fr, fu = np.nonzero(new)
    return times


def ic_sizes(p, seeds, key, run_start, n_runs):
    """Final active-set size for runs ``run_start .. run_start + n_runs - 1``."""
    seeds = np.asarray(seeds, dtype=np.intp)
    n = p.shape[0]
    out = np.empty(n_runs, dtype=np.int64)
    step = max(1, (1 << 16) // max(n, 1))
    for lo in range(0, n_runs, step):
        m = min(step, n_runs - lo)
        indptr = np.arange(m + 1, dtype=np.intp) * seeds.size
        idx = np.tile(seeds, m)
        runs = np.arange(run_start + lo, run_start + lo + m, dtype=np.uint64)
        out[lo:lo + m] = (ic_times(p, indptr, idx, key, runs) >= 0).sum(axis=1)
    return out


def loglik_coef(p, free, indptr, idx, npos, nneg, lam):
    """Summed log-likelihood and per-pair gradient weights.

    ``p`` holds clamped pair probabilities, ``free`` marks pairs whose clamp
    is inactive.  Sample ``s`` has activator pairs ``idx[indptr[s]:indptr[s+1]]``
    and ``npos[s]`` / ``nneg[s]`` positive / negative occurrences.  Returns
    ``(sum_s ll_s, coef)`` with ``grad = X.T @ coef`` (unnormalized).
    """
    lens = np.diff(indptr)
    if lens.size == 0:
        return 0.0, np.zeros(p.shape[0])
    pa = p[idx]
    logq = np.add.reduceat(np.log1p(-p)[idx], indptr[:-1])
    q = np.exp(logq)
    P = -np.expm1(logq)
    log_floor = lens * np.log(lam)          # log(1 - hi) at the upper clamp
    hi = -np.expm1(log_floor)
    low, high = P < lam, P > hi
    clamped = low | high
    Pc = np.clip(P, lam, hi)
    log_not = np.where(high, log_floor, np.where(low, np.log1p(-lam), logq))
    ll = float(np.sum(npos * np.log(Pc) + nneg * log_not))
    c = np.where(clamped, 0.0, npos * q / Pc - nneg)
    w = np.repeat(c, lens) * pa * free[idx]
    coef = np.bincount(idx, weights=w, minlength=p.shape[0])
    return ll, coef
