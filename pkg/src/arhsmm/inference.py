"""Most likely hidden path decoding (max-product analogue of the forward pass)."""

from __future__ import annotations

import numpy as np

from . import _kernels
from .messages import _check_pair
from .model import HiddenPath, ModelParams, Sequence, log_params
from .observation import log_emission_matrix
from .preprocess import LabelTrack


def viterbi(model: ModelParams, seq: Sequence) -> tuple[HiddenPath, float]:
    """Jointly most probable (regime, counter) path and its log probability.

    Tie-breaking is total for reproducibility: among equal-score
    predecessors the smaller regime index wins, then the smaller duration.
    The emitted path spans all N samples; the first p inherit the first
    decoded regime (context_len marks them).
    """
    _check_pair(model, seq)
    K, D, p = model.num_regimes, model.max_duration, model.ar_order
    E = log_emission_matrix(model, seq)
    T = E.shape[0]
    logpi, logA, loglam = log_params(model)
    flags = np.zeros((T, K, D), dtype=np.uint8)
    renarg = np.zeros((T, K), dtype=np.int64)
    final = np.empty((K, D))
    _kernels.viterbi_pass(E, logpi, logA, loglam, flags, renarg, final)

    best = int(np.argmax(final))  # row-major: smallest regime, then duration
    k, d = best // D, best % D
    logprob = float(final[k, d])

    z = np.empty(T, dtype=np.int64)
    ctr = np.empty(T, dtype=np.int64)
    for t in range(T - 1, -1, -1):
        z[t] = k
        ctr[t] = d + 1
        if t > 0:
            if flags[t, k, d]:
                k, d = int(renarg[t, k]), 0
            else:
                d = d + 1

    if p > 0:
        z = np.concatenate([np.full(p, z[0], dtype=np.int64), z])
        ctr = np.concatenate([ctr[0] + np.arange(p, 0, -1), ctr])
    return HiddenPath(z=z, d=ctr, context_len=p), logprob


def labels_from_path(path: HiddenPath, sample_rate: float) -> LabelTrack:
    """Per-sample regime labels of a path; counters and precisions dropped."""
    return LabelTrack(labels=path.z.copy(), sample_rate=sample_rate)
