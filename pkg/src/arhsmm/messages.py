"""Exact forward-backward message passing for the explicit-duration chain.

Messages live entirely in the log domain (no linear-domain scaling): the
duration axis can reach 1500 cells and heavy-tailed emissions produce an
extreme dynamic range. A forward slice at time index t is a (K, D) array
over (regime, counter-1).

Memory: storing every slice costs (N-p)*K*D doubles, about 2 GB at the
EEG operating point, so the forward pass stores checkpoints every
ceil(sqrt(N-p)) steps by default and consumers recompute slices within a
segment during the backward sweep. Small instances store everything.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import _kernels
from .model import ModelParams, Sequence, log_params, require_valid
from .observation import log_emission_matrix

# slices stored densely when T*K*D stays under this many doubles (32 MB)
STORE_ALL_BUDGET = 4_000_000


@dataclass
class ForwardResult:
    """Forward sweep output: log likelihood plus checkpointed slices."""

    loglik: float
    checkpoints: np.ndarray  # (n_ckpt, K, D), slice i is time index i*stride
    stride: int
    final: np.ndarray  # slice at the last time index
    log_emissions: np.ndarray  # (T, K)
    logpi: np.ndarray
    logA: np.ndarray
    loglam: np.ndarray
    n_samples: int
    ar_order: int

    @property
    def T(self) -> int:
        return self.log_emissions.shape[0]

    def slice_at(self, t: int) -> np.ndarray:
        """Forward slice at time index t (0 = first emitted sample).

        Recomputed from the nearest checkpoint when not stored.
        """
        if t < 0 or t >= self.T:
            raise IndexError(f"time index {t} out of range [0, {self.T})")
        base = t // self.stride
        if t % self.stride == 0:
            return self.checkpoints[base].copy()
        t0 = base * self.stride
        out = np.empty((t - t0 + 1,) + self.checkpoints.shape[1:])
        _kernels.forward_segment(self.log_emissions, self.logA, self.loglam,
                                 t0, self.checkpoints[base], out)
        return out[-1]


def _check_pair(model: ModelParams, seq: Sequence) -> None:
    require_valid(model)
    if len(seq) <= model.ar_order:
        raise ValueError(
            f"sequence length {len(seq)} must exceed AR order {model.ar_order}")


def forward(model: ModelParams, seq: Sequence, stride: int | None = None) -> ForwardResult:
    """Forward recursion over (regime, counter) states.

    At each step, mass either decrements its counter within the same
    regime or renews: chains whose counter hit 1 pass through the
    transition matrix and draw a fresh duration. Per-step cost is
    O(K*D + K^2). The returned log likelihood is the logsumexp of the
    final slice.
    """
    _check_pair(model, seq)
    K, D = model.num_regimes, model.max_duration
    E = log_emission_matrix(model, seq)
    T = E.shape[0]
    logpi, logA, loglam = log_params(model)
    if stride is None:
        stride = 1 if T * K * D <= STORE_ALL_BUDGET else math.ceil(math.sqrt(T))
    stride = max(1, int(stride))
    n_ckpt = (T - 1) // stride + 1
    ckpts = np.empty((n_ckpt, K, D))
    final = np.empty((K, D))
    loglik = _kernels.forward_pass(E, logpi, logA, loglam, stride, ckpts, final)
    return ForwardResult(
        loglik=float(loglik), checkpoints=ckpts, stride=stride, final=final,
        log_emissions=E, logpi=logpi, logA=logA, loglam=loglam,
        n_samples=len(seq), ar_order=model.ar_order)


def backward(model: ModelParams, seq: Sequence, fwd: ForwardResult) -> Iterator[np.ndarray]:
    """Backward messages as a stream of (K, D) slices in reverse time order.

    The first yielded slice (last time index) is all zeros by definition.
    Memory stays O(K*D); the stream exists so posteriors can be paired
    with recomputed forward slices without materializing the full lattice.
    """
    _check_pair(model, seq)
    E = log_emission_matrix(model, seq)
    if (E.shape != fwd.log_emissions.shape or fwd.n_samples != len(seq)
            or fwd.ar_order != model.ar_order
            or not np.array_equal(E, fwd.log_emissions)):
        raise ValueError("forward result does not match this (model, sequence) pair")
    K, D = model.num_regimes, model.max_duration
    beta = np.zeros((K, D))
    out = np.empty((K, D))
    yield beta.copy()
    for t in range(E.shape[0] - 2, -1, -1):
        _kernels.beta_step_into(E[t + 1], beta, fwd.logA, fwd.loglam, out)
        beta, out = out, beta
        yield beta.copy()


def loglikelihood(model: ModelParams, seqs: list[Sequence] | Sequence) -> float:
    """Total marginal log likelihood of a batch of sequences."""
    if isinstance(seqs, Sequence):
        seqs = [seqs]
    if not seqs:
        raise ValueError("empty batch")
    return float(sum(forward(model, s).loglik for s in seqs))
