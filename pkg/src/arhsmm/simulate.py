"""Ancestral sampling from the generative model.

The pseudo-random source is numpy's Philox generator, a seedable,
splittable counter-based generator, so reproductions in other environments
can match streams; tests nevertheless assert statistics, not bit patterns.

The hidden chain starts at the first sample (regime from pi, duration from
that regime's pmf) while inference conditions on the first p samples; the
p-step offset is a property of the conditioning convention, immaterial at
any realistic length. The p context samples needed before the first output
are drawn standard normal.
"""

from __future__ import annotations

import numpy as np

from .model import HiddenPath, ModelParams, Sequence, normalized, require_valid


def rng_from_seed(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed)))


def sample_sequence(model: ModelParams, n_samples: int, seed: int) -> tuple[Sequence, HiddenPath]:
    """Draw one sequence and its hidden path, deterministic given the seed.

    Per sample: the regime/counter pair evolves by counter decrement or
    renewal through the transition matrix; a precision is drawn from the
    regime's Gamma(nu/2, nu/2); the output is the AR prediction plus
    sigma/sqrt(precision) times standard normal noise.
    """
    require_valid(model)
    model = normalized(model)
    p = model.ar_order
    if n_samples <= p:
        raise ValueError(f"n_samples ({n_samples}) must exceed AR order ({p})")
    rng = rng_from_seed(seed)
    K, D = model.num_regimes, model.max_duration
    lam = np.stack([r.duration_probs for r in model.regimes])
    cum_pi = np.cumsum(model.pi)
    cum_trans = np.cumsum(model.trans, axis=1)
    cum_lam = np.cumsum(lam, axis=1)

    ustate = {"buf": rng.random(1 << 15), "pos": 0}

    def next_u() -> float:
        if ustate["pos"] >= ustate["buf"].size:
            ustate["buf"] = rng.random(1 << 15)
            ustate["pos"] = 0
        ustate["pos"] += 1
        return float(ustate["buf"][ustate["pos"] - 1])

    z = np.empty(n_samples, dtype=np.int64)
    d = np.empty(n_samples, dtype=np.int64)
    k = min(int(np.searchsorted(cum_pi, next_u(), side="right")), K - 1)
    n = 0
    while n < n_samples:
        dur = min(int(np.searchsorted(cum_lam[k], next_u(), side="right")), D - 1) + 1
        stop = min(n + dur, n_samples)
        z[n:stop] = k
        d[n:stop] = np.arange(dur, dur - (stop - n), -1)
        n = stop
        if n < n_samples:
            k = min(int(np.searchsorted(cum_trans[k], next_u(), side="right")), K - 1)

    nus = np.array([r.nu for r in model.regimes])
    sigmas = np.array([r.sigma for r in model.regimes])
    shape = nus[z] / 2.0
    tau = rng.gamma(shape=shape, scale=1.0 / shape)
    eps = rng.standard_normal(n_samples)
    noise = sigmas[z] * eps / np.sqrt(tau)

    context = rng.standard_normal(p)
    y = np.empty(n_samples)
    if p == 0:
        y[:] = noise
    else:
        weights = [model.regimes[k].ar_weights for k in range(K)]
        buf = np.concatenate([context, np.zeros(n_samples)])
        for n in range(n_samples):
            w = weights[z[n]]
            ctx = buf[n:n + p][::-1]  # most recent first, aligned with weights
            buf[p + n] = w @ ctx + noise[n]
        y = buf[p:]

    seq = Sequence(samples=y, sample_rate=model.sample_rate)
    path = HiddenPath(z=z, d=d, tau=tau, context_len=0)
    return seq, path
