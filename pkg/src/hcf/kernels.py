"""Kernel backend selection.

The compiled extension is used when it imports; set ``HCF_KERNELS=python``
to force the numpy fallback.  ``HCF_NUM_THREADS`` bounds the worker pool
used for Monte Carlo batches and dataset generation.
"""
import os
from concurrent.futures import ThreadPoolExecutor

from . import _pykernels

MASK64 = (1 << 64) - 1

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    BACKENDS["cython"] = _ckernels

_forced = os.environ.get("HCF_KERNELS", "").strip().lower()
if _forced and _forced not in BACKENDS:
    raise ImportError(f"HCF_KERNELS={_forced!r} is not available; have {sorted(BACKENDS)}")
BACKEND = _forced or ("cython" if _ckernels is not None else "python")
_impl = BACKENDS[BACKEND]


def use(name):
    """Switch the active backend (mainly for tests and benchmarks)."""
    global BACKEND, _impl
    if name not in BACKENDS:
        raise ValueError(f"unknown kernel backend {name!r}; have {sorted(BACKENDS)}")
    BACKEND, _impl = name, BACKENDS[name]


def stream_key(seed):
    return int(seed) & MASK64


def ic_times(p, seed_indptr, seed_idx, key, runs):
    return _impl.ic_times(p, seed_indptr, seed_idx, stream_key(key), runs)


def ic_sizes(p, seeds, key, run_start, n_runs):
    return _impl.ic_sizes(p, seeds, stream_key(key), int(run_start), int(n_runs))


def loglik_coef(p, free, indptr, idx, npos, nneg, lam):
    return _impl.loglik_coef(p, free, indptr, idx, npos, nneg, float(lam))


def num_threads():
    raw = os.environ.get("HCF_NUM_THREADS")
    if raw:
        return max(1, int(raw))
    return os.cpu_count() or 1


def pmap(fn, items):
    """Ordered map over a thread pool; sequential when one thread is configured."""
    items = list(items)
    workers = min(num_threads(), len(items))
    if workers <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))
