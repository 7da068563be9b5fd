"""Compare the compiled and numpy kernel backends on representative workloads.

    python3 benchmarks/bench_kernels.py [--repeat 3]
"""
import argparse
import time

import numpy as np

from hcf import kernels
from hcf.diffusion import estimate_spread, simulate_cascades
from hcf.features import features_for_grid
from hcf.model import HcfModel, loglik_and_grad, probability_matrix
from hcf.samples import compile_samples, encode_cascades
from hcf.synthetic import synthetic_grid


def workloads():
    grid = synthetic_grid()
    feats, spec = features_for_grid(grid)
    theta = np.random.default_rng(0).uniform(-0.3, 0.3, spec.d) - 0.4
    pm = probability_matrix(HcfModel(theta, spec), feats)
    seeds = [[lid] for lid in pm.line_ids] * 200
    traces = simulate_cascades(pm, seeds, rng_seed=1)
    cs = compile_samples(encode_cascades(traces, feats.line_ids), feats.line_ids)
    X = feats.flat()
    return {
        "spread, 20k IC runs": lambda: estimate_spread(pm, [pm.line_ids[0]], 20_000, 3),
        "6000 IC traces": lambda: simulate_cascades(pm, seeds, rng_seed=2),
        f"loglik+grad, {len(cs.npos)} keys": lambda: loglik_and_grad(theta, X, cs, 1e-9),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    jobs = workloads()
    names = sorted(kernels.BACKENDS)
    print(f"{'workload':32s}" + "".join(f"{n:>12s}" for n in names) + "   speedup")
    prev = kernels.BACKEND
    for label, fn in jobs.items():
        best = {}
        for name in names:
            kernels.use(name)
            fn()  # warm up
            times = []
            for _ in range(args.repeat):
                t = time.perf_counter()
                fn()
                times.append(time.perf_counter() - t)
            best[name] = min(times)
        row = f"{label:32s}" + "".join(f"{best[n]:11.4f}s" for n in names)
        if "cython" in best:
            row += f"   {best['python'] / best['cython']:6.1f}x"
        print(row)
    kernels.use(prev)


if __name__ == "__main__":
    main()
