# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the kernels in ``_pykernels``.

Edge trials are drawn lazily (only for inactive targets) from the same
counter-based stream, so IC outcomes match the numpy fallback bit for bit.
"""
import numpy as np

from libc.math cimport exp, expm1, log, log1p
from libc.stdint cimport int32_t, int64_t, uint64_t


cdef inline uint64_t _splitmix64(uint64_t z) noexcept nogil:
    z = z + 0x9E3779B97F4A7C15ULL
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double _unit(uint64_t h) noexcept nogil:
    return <double>(h >> 11) * (1.0 / 9007199254740992.0)


cdef Py_ssize_t _run_one(const double[:, ::1] p, uint64_t base,
                         int32_t[::1] times, Py_ssize_t[::1] frontier,
                         Py_ssize_t[::1] nxt, Py_ssize_t nf) noexcept nogil:
    """Run one cascade from ``frontier[:nf]`` (already stamped 0); return size."""
    cdef Py_ssize_t n = p.shape[0]
    cdef Py_ssize_t size = nf, nn, i, u, v
    cdef int32_t t = 0
    cdef uint64_t row
    while nf > 0:
        t += 1
        nn = 0
        for i in range(nf):
            u = frontier[i]
            row = base + <uint64_t>u * <uint64_t>n
            for v in range(n):
                if times[v] >= 0:
                    continue
                if _unit(_splitmix64(row + <uint64_t>v)) < p[u, v]:
                    times[v] = t
                    nxt[nn] = v
                    nn += 1
        for i in range(nn):
            frontier[i] = nxt[i]
        nf = nn
        size += nn
    return size


def ic_times(p, seed_indptr, seed_idx, uint64_t key, runs):
    cdef const double[:, ::1] pv = np.ascontiguousarray(p, dtype=np.float64)
    cdef Py_ssize_t n = pv.shape[0]
    cdef const uint64_t[::1] rv = np.ascontiguousarray(runs, dtype=np.uint64)
    cdef const Py_ssize_t[::1] ip = np.ascontiguousarray(seed_indptr, dtype=np.intp)
    cdef const Py_ssize_t[::1] ix = np.ascontiguousarray(seed_idx, dtype=np.intp)
    cdef Py_ssize_t R = rv.shape[0]
    out = np.full((R, n), -1, dtype=np.int32)
    cdef int32_t[:, ::1] ov = out
    cdef Py_ssize_t[::1] frontier = np.empty(max(n, 1), dtype=np.intp)
    cdef Py_ssize_t[::1] nxt = np.empty(max(n, 1), dtype=np.intp)
    cdef Py_ssize_t r, j, nf, u
    cdef uint64_t base
    with nogil:
        for r in range(R):
            base = _splitmix64(key ^ _splitmix64(rv[r]))
            nf = 0
            for j in range(ip[r], ip[r + 1]):
                u = ix[j]
                if ov[r, u] < 0:
                    ov[r, u] = 0
                    frontier[nf] = u
                    nf += 1
            _run_one(pv, base, ov[r], frontier, nxt, nf)
    return out


def ic_sizes(p, seeds, uint64_t key, Py_ssize_t run_start, Py_ssize_t n_runs):
    cdef const double[:, ::1] pv = np.ascontiguousarray(p, dtype=np.float64)
    cdef Py_ssize_t n = pv.shape[0]
    cdef const Py_ssize_t[::1] sv = np.ascontiguousarray(seeds, dtype=np.intp)
    out = np.empty(n_runs, dtype=np.int64)
    cdef int64_t[::1] ov = out
    cdef int32_t[::1] times = np.empty(max(n, 1), dtype=np.int32)
    cdef Py_ssize_t[::1] frontier = np.empty(max(n, 1), dtype=np.intp)
    cdef Py_ssize_t[::1] nxt = np.empty(max(n, 1), dtype=np.intp)
    cdef Py_ssize_t r, j, nf, u
    cdef uint64_t base
    with nogil:
        for r in range(n_runs):
            for j in range(n):
                times[j] = -1
            base = _splitmix64(key ^ _splitmix64(<uint64_t>(run_start + r)))
            nf = 0
            for j in range(sv.shape[0]):
                u = sv[j]
                if times[u] < 0:
                    times[u] = 0
                    frontier[nf] = u
                    nf += 1
            ov[r] = _run_one(pv, base, times, frontier, nxt, nf)
    return out


def loglik_coef(p, free, indptr, idx, npos, nneg, double lam):
    cdef const double[::1] pv = np.ascontiguousarray(p, dtype=np.float64)
    cdef const unsigned char[::1] fv = np.ascontiguousarray(free, dtype=np.uint8)
    cdef const Py_ssize_t[::1] ip = np.ascontiguousarray(indptr, dtype=np.intp)
    cdef const Py_ssize_t[::1] ix = np.ascontiguousarray(idx, dtype=np.intp)
    cdef const double[::1] pos = np.ascontiguousarray(npos, dtype=np.float64)
    cdef const double[::1] neg = np.ascontiguousarray(nneg, dtype=np.float64)
    coef = np.zeros(pv.shape[0], dtype=np.float64)
    cdef double[::1] cv = coef
    lq_arr = np.log1p(-np.asarray(pv))
    cdef const double[::1] lq = lq_arr
    cdef Py_ssize_t S = ip.shape[0] - 1, s, j
    cdef double logq, q, P, hi, c, log_floor, ll = 0.0
    cdef double log_lam = log(lam), low_not = log1p(-lam)
    with nogil:
        for s in range(S):
            logq = 0.0
            for j in range(ip[s], ip[s + 1]):
                logq += lq[ix[j]]
            P = -expm1(logq)
            log_floor = (ip[s + 1] - ip[s]) * log_lam
            hi = -expm1(log_floor)
            if P < lam:
                ll += pos[s] * log_lam + neg[s] * low_not
                continue
            if P > hi:
                ll += pos[s] * log(hi) + neg[s] * log_floor
                continue
            ll += pos[s] * log(P) + neg[s] * logq
            q = exp(logq)
            c = pos[s] * q / P - neg[s]
            for j in range(ip[s], ip[s + 1]):
                if fv[ix[j]]:
                    cv[ix[j]] += c * pv[ix[j]]
    return ll, coef
