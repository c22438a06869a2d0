"""Shared synthetic configurations for tests."""

from __future__ import annotations

import numpy as np

from arhsmm import ModelParams, RegimeParams


def discretized_normal(D, mean, sd):
    idx = np.arange(1, D + 1)
    w = np.exp(-0.5 * ((idx - mean) / sd) ** 2)
    return w / w.sum()


def uniform_tail(D, start):
    w = np.zeros(D)
    w[start:] = 1.0
    return w / w.sum()


def separated_dynamics_model(rate: float = 50.0) -> ModelParams:
    """White noise vs near-unit-root oscillator; Viterbi recovers >=99%."""
    r, theta = 0.985, 2 * np.pi * 13.0 / rate
    D = 100
    osc = RegimeParams(np.array([2 * r * np.cos(theta), -r * r]), 0.15, 30.0,
                       discretized_normal(D, 70.0, 10.0))
    noise = RegimeParams(np.zeros(2), 1.0, 30.0, uniform_tail(D, 50))
    return ModelParams(num_regimes=2, ar_order=2, max_duration=D,
                       pi=np.array([1.0, 0.0]),
                       trans=np.array([[0.2, 0.8], [0.8, 0.2]]),
                       regimes=(noise, osc), sample_rate=rate)


def recovery_model(rate: float = 50.0) -> ModelParams:
    """Two-regime generator for parameter-recovery runs.

    The chain alternates strictly (zero self-transitions) so run lengths
    identify the duration pmfs directly; self-renewals would trade off
    against duration tails and flatten the likelihood in that direction.
    """
    D = 50
    r, theta = 0.97, 2 * np.pi * 13.0 / rate
    reg0 = RegimeParams(np.array([0.5, -0.3]), 1.0, 4.0, _trapezoid(D, 5, 25))
    reg1 = RegimeParams(np.array([2 * r * np.cos(theta), -r * r]), 0.25, 9.0,
                        discretized_normal(D, 12.0, 4.0))
    return ModelParams(num_regimes=2, ar_order=2, max_duration=D,
                       pi=np.array([0.6, 0.4]),
                       trans=np.array([[0.0, 1.0], [1.0, 0.0]]),
                       regimes=(reg0, reg1), sample_rate=rate)


def _trapezoid(D, lo, hi):
    w = np.zeros(D)
    w[lo - 1:hi] = 1.0
    return w / w.sum()
