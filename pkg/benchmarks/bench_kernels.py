"""Time the hot kernels on the numba and the pure-numpy path.

Each backend runs in its own interpreter because the choice is fixed at
import time by ``ODFORGE_NUMBA``::

    python benchmarks/bench_kernels.py            # both backends, side by side
    python benchmarks/bench_kernels.py --worker   # current backend only, JSON out
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _best_of(fn, repeat):
    fn()  # warm-up (includes JIT compilation)
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def run_worker(repeat: int) -> dict:
    from odforge import backend, curation, detectors, metrics
    from odforge.priors import bivariate

    rng = np.random.default_rng(0)
    d = 40
    codes = rng.integers(0, len(bivariate.PAIR_FAMILIES), size=(d - 1, d - 1))
    thetas = np.empty((d - 1, d - 1))
    dfs = np.full((d - 1, d - 1), 5.0)
    for idx in np.ndindex(codes.shape):
        fam = bivariate.PAIR_FAMILIES[codes[idx]]
        tau = 0.5 if fam in bivariate.POSITIVE_ONLY else 0.3
        thetas[idx] = bivariate.theta_from_tau(fam, tau)
    w = rng.random((2000, d))

    perf = metrics.PerfTable([f"m{i}" for i in range(14)], [f"d{j}" for j in range(690)],
                             rng.random((14, 690)))
    cfg = curation.RepSetConfig(subset_size=50, iterations=20_000, seed=0)
    a, b = rng.random(20), rng.random(20)
    a_mc, b_mc = rng.random(40), rng.random(40)
    train, test = rng.standard_normal((2000, 20)), rng.standard_normal((1000, 20))

    cases = {
        "knn k=5 2000x1000 d=20": lambda: detectors.knn_scores(train, test, detectors.KnnParams(5, "kth")),
        "dte posterior 2000x1000 d=20": lambda: detectors.dte_log_posterior(train, test),
        "dvine_sample d=40 n=2000": lambda: bivariate.dvine_sample(w, codes, thetas, dfs),
        "representative_subset 20k iters": lambda: curation.representative_subset(perf, cfg),
        "elo 14x690": lambda: metrics.elo(perf),
        "permutation_test exact n=20": lambda: metrics.permutation_test(a, b),
        "permutation_test MC n=40": lambda: metrics.permutation_test(a_mc, b_mc, budget=100_000),
    }
    return {"backend": backend(), "seconds": {k: _best_of(f, repeat) for k, f in cases.items()}}


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--worker", action="store_true")
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)
    if args.worker:
        print(json.dumps(run_worker(args.repeat)))
        return

    results = {}
    for flag in ("1", "0"):
        env = dict(os.environ, ODFORGE_NUMBA=flag)
        out = subprocess.run([sys.executable, __file__, "--worker", "--repeat", str(args.repeat)],
                             env=env, capture_output=True, text=True, check=True)
        res = json.loads(out.stdout.strip().splitlines()[-1])
        results[res["backend"]] = res["seconds"]
    fast, slow = results.get("numba", {}), results.get("numpy", {})
    print(f"{'kernel':36s} {'numba s':>10s} {'numpy s':>10s} {'speedup':>8s}")
    for name in slow:
        nb = fast.get(name, float("nan"))
        print(f"{name:36s} {nb:10.4f} {slow[name]:10.4f} {slow[name] / nb:8.1f}")


if __name__ == "__main__":
    main()
