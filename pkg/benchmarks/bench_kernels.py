#!/usr/bin/env python3
"""Time the numba kernels against the pure-numpy fallback.

Covers the three hot paths (forward pass, posterior-statistics segment
sweep, Viterbi) at a few operating points including the EEG-scale one
(N=90000, D=1500 needs ~a minute on the numpy path; trim --scales if that
is too long). Usage:

    python benchmarks/bench_kernels.py [--repeats 3] [--scales small,medium,paper]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from arhsmm import _kernels
from arhsmm.model import ModelParams, RegimeParams, Sequence, log_params
from arhsmm.observation import log_emission_matrix

SCALES = {
    "small": dict(T=2_000, K=2, D=50),
    "medium": dict(T=20_000, K=2, D=200),
    "paper": dict(T=90_000, K=2, D=1500),
}


def build_instance(T, K, D, seed=0):
    rng = np.random.default_rng(seed)
    regimes = tuple(
        RegimeParams(ar_weights=np.array([0.4, -0.2]),
                     sigma=float(rng.uniform(0.5, 1.5)),
                     nu=float(rng.uniform(3, 12)),
                     duration_probs=rng.dirichlet(np.ones(D)))
        for _ in range(K))
    model = ModelParams(K, 2, D, rng.dirichlet(np.ones(K)),
                        np.vstack([rng.dirichlet(np.ones(K)) for _ in range(K)]),
                        regimes, 50.0)
    seq = Sequence(rng.normal(size=T + 2), 50.0)
    E = log_emission_matrix(model, seq)
    logpi, logA, loglam = log_params(model)
    return E, logpi, logA, loglam


def bench_forward(impl, E, logpi, logA, loglam):
    T, K = E.shape
    D = loglam.shape[1]
    stride = max(1, int(np.sqrt(T)))
    ckpts = np.empty(((T - 1) // stride + 1, K, D))
    final = np.empty((K, D))
    impl["forward_pass"](E, logpi, logA, loglam, stride, ckpts, final)


def bench_stats_segment(impl, E, logpi, logA, loglam):
    T, K = E.shape
    D = loglam.shape[1]
    L = min(T, 512)
    seg = np.empty((L, K, D))
    seg[0] = logpi[:, None] + loglam + E[0][:, None]
    impl["forward_segment"](E, logA, loglam, 0, seg[0].copy(), seg)
    gamma = np.zeros((T, K))
    xi = np.zeros((K, K))
    dur = np.zeros((K, D))
    impl["backward_stats_segment"](E, logA, loglam, 0, L - 1, seg,
                                   np.zeros((K, D)), -1.0, gamma, xi, dur,
                                   np.empty((K, D)))


def bench_viterbi(impl, E, logpi, logA, loglam):
    T, K = E.shape
    D = loglam.shape[1]
    flags = np.zeros((T, K, D), dtype=np.uint8)
    renarg = np.zeros((T, K), dtype=np.int64)
    final = np.empty((K, D))
    impl["viterbi_pass"](E, logpi, logA, loglam, flags, renarg, final)


BENCHES = {
    "forward": bench_forward,
    "stats_segment": bench_stats_segment,
    "viterbi": bench_viterbi,
}


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--scales", default="small,medium")
    args = ap.parse_args()

    if "numba" not in _kernels.BACKENDS:
        print("numba backend unavailable; nothing to compare")
        return 1

    print(f"{'scale':<8} {'kernel':<14} {'numpy':>10} {'numba':>10} {'speedup':>8}")
    for scale in args.scales.split(","):
        cfg = SCALES[scale.strip()]
        E, logpi, logA, loglam = build_instance(**cfg)
        for kname, bench in BENCHES.items():
            times = {}
            for bname, impl in _kernels.BACKENDS.items():
                bench(impl, E, logpi, logA, loglam)  # warm (jit compile)
                best = min(
                    _timeit(bench, impl, E, logpi, logA, loglam)
                    for _ in range(args.repeats))
                times[bname] = best
            ratio = times["numpy"] / times["numba"]
            print(f"{scale:<8} {kname:<14} {times['numpy']:>9.3f}s "
                  f"{times['numba']:>9.3f}s {ratio:>7.1f}x")
    return 0


def _timeit(fn, *args):
    t0 = time.perf_counter()
    fn(*args)
    return time.perf_counter() - t0


if __name__ == "__main__":
    raise SystemExit(main())
