"""Parameter estimation: EM from raw sequences, complete-data fits from labels.

One EM iteration is coordinate ascent on the marginal log likelihood:
posterior expectations of the hidden quantities under the current
parameters (E-step), then closed-form updates of pi, the transition matrix,
duration pmfs, AR weights (weighted least squares with weights combining
regime responsibility and robustness), noise scales, and a one-dimensional
root solve for each tail parameter (M-step).

All observation-side sums run over samples p+1..N; the first p samples are
conditioning context. SuffStats arrays are therefore (N-p) x K, row t
aligned with sample p+1+t.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .messages import forward
from .model import (ModelParams, RegimeParams, Sequence, normalized,
                    require_valid, validate_model)
from .observation import ar_design_matrix, digamma, residual_matrix, tau_mean

LAMBDA_SMOOTHING = 1e-8
DEGENERATE_MASS = 1e-8
NU_BRACKET = (1e-2, 1e3)


class FitWarning(UserWarning):
    """Non-fatal fitting event worth surfacing (freeze, clamp, ridge, clip)."""


@dataclass
class SuffStats:
    """Aggregated E-step expectations sufficient for one M-step."""

    gamma: np.ndarray      # (T, K) posterior regime probabilities, rows sum to 1
    xi_agg: np.ndarray     # (K, K) expected regime-switch counts at renewals
    dur_stats: np.ndarray  # (K, D) expected duration-draw counts per dwell length
    omega: np.ndarray      # (T, K) posterior precision means (robustness weights)
    elogtau: np.ndarray    # (T, K) posterior log-precision means
    loglik: float


@dataclass
class FitResult:
    model: ModelParams
    loglik_trace: list[float]
    flags: list[str] = field(default_factory=list)
    converged: bool = False
    n_iters: int = 0


def _tau_moments(model: ModelParams, seq: Sequence) -> tuple[np.ndarray, np.ndarray]:
    resid = residual_matrix(model, seq)
    omega = np.empty_like(resid)
    elog = np.empty_like(resid)
    for k, reg in enumerate(model.regimes):
        omega[:, k] = tau_mean(resid[:, k], reg.sigma, reg.nu)
        half = (reg.nu + 1.0) / 2.0
        elog[:, k] = np.log(omega[:, k]) + digamma(half) - math.log(half)
    return omega, elog


def e_step(model: ModelParams, seq: Sequence) -> SuffStats:
    """Posterior expectations for one sequence under the current model.

    The transition statistic is aggregated online during the backward
    sweep (the four-way joint is never materialized); forward slices are
    recomputed per checkpoint segment, keeping memory at O(sqrt(T)*K*D).
    """
    fwd = forward(model, seq)
    E, logA, loglam = fwd.log_emissions, fwd.logA, fwd.loglam
    T = E.shape[0]
    K, D = model.num_regimes, model.max_duration

    gamma = np.zeros((T, K))
    xi_agg = np.zeros((K, K))
    dur_stats = np.zeros((K, D))
    beta = np.zeros((K, D))  # entry carry, beta at the top boundary
    beta_exit = np.empty((K, D))

    # segment boundaries sit on checkpoints but span at least ~128 steps,
    # so per-segment call overhead stays negligible at every stride
    ck_step = max(1, -(-128 // fwd.stride))
    ckpt_ts = list(range(0, T, fwd.stride))
    bounds = sorted(set(ckpt_ts[::ck_step]) | {T - 1})
    for i in range(len(bounds) - 2, -1, -1):
        a, b = bounds[i], bounds[i + 1]
        seg = np.empty((b - a + 1, K, D))
        _kernels.forward_segment(E, logA, loglam, a, fwd.checkpoints[a // fwd.stride], seg)
        _kernels.backward_stats_segment(E, logA, loglam, a, b, seg, beta,
                                        fwd.loglik, gamma, xi_agg, dur_stats, beta_exit)
        beta, beta_exit = beta_exit, beta

    with np.errstate(under="ignore"):
        eta0 = np.exp(fwd.checkpoints[0] + beta - fwd.loglik)
    gamma[0] = eta0.sum(axis=1)
    dur_stats += eta0
    gamma /= gamma.sum(axis=1, keepdims=True)

    omega, elogtau = _tau_moments(model, seq)
    return SuffStats(gamma=gamma, xi_agg=xi_agg, dur_stats=dur_stats,
                     omega=omega, elogtau=elogtau, loglik=fwd.loglik)


def weighted_least_squares(design: np.ndarray, targets: np.ndarray,
                           weights: np.ndarray) -> np.ndarray:
    """AR weights minimizing sum of weights^2 * squared residuals.

    Solved by an orthogonal factorization on the row-scaled system; a
    rank-deficient design falls back to a 1e-8 ridge (flagged).
    """
    design = np.asarray(design, dtype=float)
    targets = np.asarray(targets, dtype=float)
    weights = np.asarray(weights, dtype=float)
    p = design.shape[1]
    if p == 0:
        return np.zeros(0)
    n_pos = int(np.count_nonzero(weights > 0))
    if n_pos < p:
        raise ValueError(f"need at least {p} positively weighted rows, got {n_pos}")
    wx = design * weights[:, None]
    wy = targets * weights
    sol, _, rank, _ = np.linalg.lstsq(wx, wy, rcond=None)
    if rank < p:
        warnings.warn("rank-deficient weighted design, adding 1e-8 ridge", FitWarning)
        gram = wx.T @ wx + 1e-8 * np.eye(p)
        sol = np.linalg.solve(gram, wx.T @ wy)
    return sol


def update_sigma(stats: SuffStats, seq: Sequence, new_weights: list[np.ndarray],
                 ar_order: int, min_sigma: float = 1e-6) -> np.ndarray:
    """Per-regime noise scale from responsibility- and robustness-weighted residuals."""
    num, den = _sigma_terms(stats, seq, new_weights, ar_order)
    out = np.empty(len(new_weights))
    for k in range(len(new_weights)):
        if den[k] <= 0:
            raise ValueError(f"regime {k} has zero responsibility mass")
        out[k] = max(math.sqrt(num[k] / den[k]), min_sigma)
    return out


def _sigma_terms(stats, seq, new_weights, ar_order):
    design = ar_design_matrix(seq.samples, ar_order)
    targets = seq.samples[ar_order:]
    K = stats.gamma.shape[1]
    num = np.empty(K)
    den = np.empty(K)
    for k in range(K):
        r = targets - design @ new_weights[k]
        gw = stats.gamma[:, k] * stats.omega[:, k]
        num[k] = float(gw @ (r * r))
        den[k] = float(stats.gamma[:, k].sum())
    return num, den


def solve_nu(gamma: np.ndarray, omega: np.ndarray, nu_prev: float) -> float:
    """Tail parameter update: root of the stationarity condition in nu.

    The condition is strictly decreasing in nu (digamma(x) - log(x) is
    strictly increasing), so bisection on [1e-2, 1e3] is exact; without a
    sign change the root lies outside and the nearest endpoint is the
    constrained maximizer (flagged).
    """
    if nu_prev <= 0:
        raise ValueError("nu_prev must be > 0")
    gamma = np.asarray(gamma, dtype=float)
    omega = np.asarray(omega, dtype=float)
    mass = float(gamma.sum())
    if mass <= 0:
        raise ValueError("zero responsibility mass")
    data_term = float(gamma @ (np.log(omega) - omega)) / mass
    const = 1.0 + data_term + digamma((nu_prev + 1.0) / 2.0) - math.log((nu_prev + 1.0) / 2.0)

    def f(nu: float) -> float:
        return const - digamma(nu / 2.0) + math.log(nu / 2.0)

    lo, hi = NU_BRACKET
    flo, fhi = f(lo), f(hi)
    if flo < 0.0:
        warnings.warn(f"nu update clamped to lower bracket {lo}", FitWarning)
        return lo
    if fhi > 0.0:
        warnings.warn(f"nu update clamped to upper bracket {hi}", FitWarning)
        return hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        fm = f(mid)
        if abs(fm) <= 1e-10 and (hi - lo) <= 1e-9:
            return mid
        if fm > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def m_step(stats: list[SuffStats] | SuffStats, seqs: list[Sequence] | Sequence,
           model_prev: ModelParams, min_sigma: float = 1e-6) -> tuple[ModelParams, list[str]]:
    """Closed-form updates for all parameters given batch E-step statistics.

    A regime whose total responsibility mass falls below 1e-8 keeps its
    previous emission parameters (flagged); duration pmfs receive 1e-8
    smoothing before normalization so no observed dwell is ever assigned
    zero probability in later E-steps.
    """
    if isinstance(stats, SuffStats):
        stats = [stats]
    if isinstance(seqs, Sequence):
        seqs = [seqs]
    if len(stats) != len(seqs):
        raise ValueError("stats/sequences batch mismatch")
    K, D, p = model_prev.num_regimes, model_prev.max_duration, model_prev.ar_order
    flags: list[str] = []

    pi = np.zeros(K)
    xi_agg = np.zeros((K, K))
    dur = np.zeros((K, D))
    for st in stats:
        pi += st.gamma[0]
        xi_agg += st.xi_agg
        dur += st.dur_stats
    pi /= pi.sum()

    trans = np.empty((K, K))
    for j in range(K):
        s = xi_agg[j].sum()
        if s <= 0:
            trans[j] = model_prev.trans[j]
            flags.append(f"trans row {j} frozen (no renewal mass)")
        else:
            trans[j] = xi_agg[j] / s

    dur = dur + LAMBDA_SMOOTHING
    dur /= dur.sum(axis=1, keepdims=True)

    mass = np.zeros(K)
    for st in stats:
        mass += st.gamma.sum(axis=0)

    designs = [ar_design_matrix(seq.samples, p) for seq in seqs]
    targets = [seq.samples[p:] for seq in seqs]

    new_regimes = []
    for k in range(K):
        prev = model_prev.regimes[k]
        if mass[k] < DEGENERATE_MASS:
            flags.append(f"regime {k} emission frozen (mass {mass[k]:.3g})")
            new_regimes.append(RegimeParams(ar_weights=prev.ar_weights.copy(),
                                            sigma=prev.sigma, nu=prev.nu,
                                            duration_probs=dur[k]))
            continue
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", FitWarning)
            if p > 0:
                rows_w = [np.sqrt(st.gamma[:, k] * st.omega[:, k]) for st in stats]
                a_new = weighted_least_squares(np.concatenate(designs),
                                               np.concatenate(targets),
                                               np.concatenate(rows_w))
            else:
                a_new = np.zeros(0)
            num = den = 0.0
            for st, X, y in zip(stats, designs, targets):
                r = y - X @ a_new if p > 0 else y
                gw = st.gamma[:, k] * st.omega[:, k]
                num += float(gw @ (r * r))
                den += float(st.gamma[:, k].sum())
            sigma_new = max(math.sqrt(num / den), min_sigma)
            nu_new = solve_nu(np.concatenate([st.gamma[:, k] for st in stats]),
                              np.concatenate([st.omega[:, k] for st in stats]),
                              prev.nu)
        for w in caught:
            flags.append(f"regime {k}: {w.message}")
        new_regimes.append(RegimeParams(ar_weights=a_new, sigma=sigma_new,
                                        nu=nu_new, duration_probs=dur[k]))

    out = ModelParams(num_regimes=K, ar_order=p, max_duration=D, pi=pi,
                      trans=trans, regimes=tuple(new_regimes),
                      sample_rate=model_prev.sample_rate)
    res = validate_model(out)
    if not res.ok:
        raise RuntimeError(f"M-step produced invalid model: {res.summary()}")
    return out, flags


def em_fit(seqs: list[Sequence] | Sequence, init: ModelParams, *,
           max_iters: int = 100, rel_tol: float = 1e-6, min_sigma: float = 1e-6,
           workers: int = 1) -> FitResult:
    """Batch EM from an initial model.

    Per iteration the log likelihood is evaluated at the current
    parameters and recorded before the M-step, so the trace is
    non-decreasing (within numerical tolerance) by construction of the
    coordinate ascent. Stops when the relative improvement drops below
    rel_tol or after max_iters.
    """
    if isinstance(seqs, Sequence):
        seqs = [seqs]
    if not seqs:
        raise ValueError("empty batch")
    require_valid(init)
    model = normalized(init)
    trace: list[float] = []
    all_flags: list[str] = []
    converged = False
    n_iters = 0
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for it in range(max_iters):
            if pool is not None:
                stats = list(pool.map(lambda s: e_step(model, s), seqs))
            else:
                stats = [e_step(model, s) for s in seqs]
            ll = float(sum(st.loglik for st in stats))
            trace.append(ll)
            n_iters = it + 1
            if it > 0:
                rel = (ll - trace[-2]) / max(1.0, abs(trace[-2]))
                if rel < rel_tol:
                    converged = True
                    break
            model, flags = m_step(stats, seqs, model, min_sigma=min_sigma)
            all_flags.extend(f"iter {it}: {f}" for f in flags)
    finally:
        if pool is not None:
            pool.shutdown()
    return FitResult(model=model, loglik_trace=trace, flags=all_flags,
                     converged=converged, n_iters=n_iters)


# ---------------------------------------------------------------------------
# complete-data (supervised) estimation
# ---------------------------------------------------------------------------

def _dirac_stats(labels: np.ndarray, K: int, D: int, p: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, bool]:
    """One-hot gamma plus run-derived transition/duration counts.

    A run longer than D is tiled into full-D dwells plus a remainder,
    joined by self-transitions; that is the unique legal-path completion
    once dwell draws are capped at D.
    """
    lab = labels[p:]
    T = lab.shape[0]
    gamma = np.zeros((T, K))
    gamma[np.arange(T), lab] = 1.0
    xi_agg = np.zeros((K, K))
    dur = np.zeros((K, D))
    clipped = False
    starts = np.flatnonzero(np.diff(lab) != 0) + 1
    bounds = np.concatenate([[0], starts, [T]])
    prev_k = None
    for i in range(len(bounds) - 1):
        k = int(lab[bounds[i]])
        length = int(bounds[i + 1] - bounds[i])
        if prev_k is not None:
            xi_agg[prev_k, k] += 1.0
        n_full, rem = divmod(length, D)
        if n_full > 0 and (n_full > 1 or rem > 0):
            clipped = True
        dur[k, D - 1] += n_full
        if rem > 0:
            dur[k, rem - 1] += 1.0
        xi_agg[k, k] += n_full - (0 if rem > 0 else 1) if n_full > 0 else 0.0
        prev_k = k
    return gamma, xi_agg, dur, clipped


def supervised_fit(seqs: list[Sequence] | Sequence,
                   labels: list | object, *,
                   num_regimes: int, ar_order: int, max_duration: int,
                   nu_init: float = 10.0, min_sigma: float = 1e-6,
                   max_inner: int = 2000, sigma_tol: float = 1e-8) -> ModelParams:
    """Complete-data fit: posterior expectations replaced by label indicators.

    Chain parameters come directly from label runs; emission parameters
    need a short inner loop because the robustness weights depend on the
    parameters they feed, alternating the precision expectation with the
    weighted updates until the noise scales stabilize.
    """
    from .preprocess import LabelTrack

    if isinstance(seqs, Sequence):
        seqs = [seqs]
    if isinstance(labels, LabelTrack):
        labels = [labels]
    if len(seqs) != len(labels):
        raise ValueError("sequence/label batch mismatch")
    K, D, p = num_regimes, max_duration, ar_order
    seen = set()
    for seq, track in zip(seqs, labels):
        if len(track) != len(seq):
            raise ValueError(f"label track length {len(track)} != sequence length {len(seq)}")
        seen.update(np.unique(track.labels[p:]).tolist())  # emission-aligned region
    missing = set(range(K)) - seen
    if missing:
        raise ValueError(f"regimes absent from labels: {sorted(missing)}")

    stats = []
    any_clipped = False
    for seq, track in zip(seqs, labels):
        gamma, xi_agg, dur, clipped = _dirac_stats(track.labels, K, D, p)
        any_clipped = any_clipped or clipped
        ones = np.ones_like(gamma)
        stats.append(SuffStats(gamma=gamma, xi_agg=xi_agg, dur_stats=dur,
                               omega=ones, elogtau=np.zeros_like(gamma), loglik=float("nan")))
    if any_clipped:
        warnings.warn(f"label runs longer than {D} samples were tiled at the duration cap",
                      FitWarning)

    model = ModelParams(
        num_regimes=K, ar_order=p, max_duration=D,
        pi=np.full(K, 1.0 / K), trans=np.full((K, K), 1.0 / K),
        regimes=tuple(RegimeParams(ar_weights=np.zeros(p), sigma=1.0, nu=nu_init,
                                   duration_probs=np.full(D, 1.0 / D)) for _ in range(K)),
        sample_rate=seqs[0].sample_rate)

    prev_sigma = np.array([r.sigma for r in model.regimes])
    for _ in range(max_inner):
        model, _ = m_step(stats, seqs, model, min_sigma=min_sigma)
        for st, seq in zip(stats, seqs):
            st.omega, st.elogtau = _tau_moments(model, seq)
        sigma = np.array([r.sigma for r in model.regimes])
        if np.max(np.abs(sigma - prev_sigma) / prev_sigma) < sigma_tol:
            break
        prev_sigma = sigma
    else:
        warnings.warn("supervised inner loop hit max_inner before scales stabilized",
                      FitWarning)
    return model


# ---------------------------------------------------------------------------
# default two-regime initialization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InitConfig:
    sample_rate: float
    ar_order: int = 5
    max_duration: int = 1500
    seed_seconds: float = 5.0
    burst_hz: float = 13.0       # center of the 11-15 Hz band
    burst_pole: float = 0.95
    burst_mean_s: float = 1.0
    burst_sd_s: float = 0.15
    nu: float = 5.0


def default_unsupervised_init(seqs: list[Sequence] | Sequence, config: InitConfig) -> ModelParams:
    """Sensible two-regime starting point for EM on burst-detection data.

    Background regime: deterministic start (pi puts all mass on it), AR
    weights least-squares fit to the first seed_seconds of signal, uniform
    durations, nonzero self-transition. Burst regime: a damped resonator
    peaking at burst_hz, discretized-normal durations around one second,
    and no self-transition (every burst ends into background).
    """
    if isinstance(seqs, Sequence):
        seqs = [seqs]
    if not seqs:
        raise ValueError("empty batch")
    p, D = config.ar_order, config.max_duration
    rate = config.sample_rate
    n_seed = int(round(config.seed_seconds * rate))
    if n_seed <= p:
        raise ValueError("seed window shorter than the AR order")

    rows_x, rows_y = [], []
    for seq in seqs:
        if len(seq) < n_seed:
            raise ValueError(f"sequence length {len(seq)} shorter than seed window {n_seed}")
        head = seq.samples[:n_seed]
        rows_x.append(ar_design_matrix(head, p))
        rows_y.append(head[p:])
    design = np.concatenate(rows_x)
    targets = np.concatenate(rows_y)
    a0 = weighted_least_squares(design, targets, np.ones(targets.shape[0]))
    resid = targets - design @ a0
    sigma0 = max(float(resid.std()), 1e-3)

    theta = 2.0 * math.pi * config.burst_hz / rate
    r = config.burst_pole
    a1 = np.zeros(p)
    a1[0] = 2.0 * r * math.cos(theta)
    if p >= 2:
        a1[1] = -r * r

    idx = np.arange(1, D + 1)
    mean_smp = config.burst_mean_s * rate
    sd_smp = config.burst_sd_s * rate
    lam1 = np.exp(-0.5 * ((idx - mean_smp) / sd_smp) ** 2)
    lam1 /= lam1.sum()

    regimes = (
        RegimeParams(ar_weights=a0, sigma=sigma0, nu=config.nu,
                     duration_probs=np.full(D, 1.0 / D)),
        RegimeParams(ar_weights=a1, sigma=sigma0, nu=config.nu,
                     duration_probs=lam1),
    )
    return ModelParams(num_regimes=2, ar_order=p, max_duration=D,
                       pi=np.array([1.0, 0.0]),
                       trans=np.array([[0.5, 0.5], [1.0, 0.0]]),
                       regimes=regimes, sample_rate=rate)
