"""Hot recursion kernels: numba-jitted loops with a vectorized numpy fallback.

All kernels work in the log domain on float64 arrays. A message slice has
shape (K, D) where slice[k, d] is the log mass of (regime k, counter d+1);
counter value 1 lives at column 0. The per-step cost is O(K*D + K^2): the
renewal mass entering each regime is reduced once per step instead of once
per duration cell.

Backend selection, read once at import:
  ARHSMM_NUMBA=0  force the pure-numpy path
  ARHSMM_NUMBA=1  require numba (ImportError if missing)
  unset           use numba when importable, else numpy
Both backends are kept importable side by side (``BACKENDS``) so tests can
check parity and ``benchmarks/bench_kernels.py`` can time them against each
other.
"""

from __future__ import annotations

import os

import numpy as np

NEG_INF = -np.inf


# ---------------------------------------------------------------------------
# numpy backend: python loop over time, vectorized over (K, D) per step
# ---------------------------------------------------------------------------

def _lse(x: np.ndarray, axis: int) -> np.ndarray:
    """logsumexp along one axis; rows of all -inf reduce to -inf, no warnings."""
    m = np.max(x, axis=axis, keepdims=True)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(under="ignore"):
        out = np.log(np.sum(np.exp(x - safe), axis=axis)) + np.squeeze(safe, axis=axis)
    return np.where(np.squeeze(m, axis=axis) == NEG_INF, NEG_INF, out)


def _alpha_step_np(e_t, prev, logA, loglam):
    ren = _lse(prev[:, 0][:, None] + logA, axis=0)
    dec = np.full_like(prev, NEG_INF)
    dec[:, :-1] = prev[:, 1:]
    return e_t[:, None] + np.logaddexp(dec, loglam + ren[:, None])


def _beta_step_np(e_next, beta_next, logA, loglam):
    s = _lse(loglam + beta_next, axis=1)
    out = np.empty_like(beta_next)
    out[:, 0] = _lse(logA + (e_next + s)[None, :], axis=1)
    out[:, 1:] = e_next[:, None] + beta_next[:, :-1]
    return out


def _forward_pass_np(E, logpi, logA, loglam, stride, ckpts, final):
    T = E.shape[0]
    cur = logpi[:, None] + loglam + E[0][:, None]
    ckpts[0] = cur
    for t in range(1, T):
        cur = _alpha_step_np(E[t], cur, logA, loglam)
        if t % stride == 0:
            ckpts[t // stride] = cur
    final[:] = cur
    return float(_lse(cur.ravel(), axis=0))


def _forward_segment_np(E, logA, loglam, t0, alpha0, out):
    out[0] = alpha0
    for i in range(1, out.shape[0]):
        out[i] = _alpha_step_np(E[t0 + i], out[i - 1], logA, loglam)


def _beta_step_into_np(e_next, beta_next, logA, loglam, out):
    out[:] = _beta_step_np(e_next, beta_next, logA, loglam)


def _backward_stats_segment_np(E, logA, loglam, a, b, alpha_seg, beta_entry,
                               loglik, gamma, xi_agg, dur_stats, beta_exit):
    beta_t = beta_entry.copy()
    with np.errstate(under="ignore"):
        for t in range(b, a, -1):
            arow = alpha_seg[t - a]
            aprev0 = alpha_seg[t - 1 - a][:, 0]
            gamma[t] = np.exp(arow + beta_t - loglik).sum(axis=1)
            # renewal-side statistics for the transition into time t
            rt = _lse(aprev0[:, None] + logA, axis=0)
            v = loglam + (E[t] - loglik)[:, None] + beta_t
            dur_stats += np.exp(rt[:, None] + v)
            xi_agg += np.exp(aprev0[:, None] + logA + _lse(v, axis=1)[None, :])
            beta_t = _beta_step_np(E[t], beta_t, logA, loglam)
    beta_exit[:] = beta_t


def _viterbi_pass_np(E, logpi, logA, loglam, flags, renarg, final):
    T, K = E.shape
    D = loglam.shape[1]
    cur = logpi[:, None] + loglam + E[0][:, None]
    karange = np.arange(K)
    for t in range(1, T):
        scores = cur[:, 0][:, None] + logA
        bj = np.argmax(scores, axis=0)
        ren = loglam + scores[bj, karange][:, None]
        dec = np.full((K, D), NEG_INF)
        dec[:, :-1] = cur[:, 1:]
        # ties: renewal predecessor is (bj, counter 1); it wins when bj <= k
        take = (ren > dec) | ((ren == dec) & (bj <= karange)[:, None])
        cur = E[t][:, None] + np.where(take, ren, dec)
        flags[t] = take
        renarg[t] = bj
    final[:] = cur


# ---------------------------------------------------------------------------
# numba backend: same contracts, explicit loops
# ---------------------------------------------------------------------------

def _build_numba_backend():
    from numba import njit

    jit = lambda fn: njit(cache=True, nogil=True)(fn)  # noqa: E731

    @njit(cache=True, nogil=True, inline="always")
    def _lse2(x, y):
        if x == NEG_INF:
            return y
        if y == NEG_INF:
            return x
        m = x if x > y else y
        return m + np.log(np.exp(x - m) + np.exp(y - m))

    @njit(cache=True, nogil=True, inline="always")
    def _renewal_in(prev0, logA, k):
        # logsumexp_j(prev0[j] + logA[j, k])
        K = prev0.shape[0]
        m = NEG_INF
        for j in range(K):
            v = prev0[j] + logA[j, k]
            if v > m:
                m = v
        if m == NEG_INF:
            return NEG_INF
        s = 0.0
        for j in range(K):
            s += np.exp(prev0[j] + logA[j, k] - m)
        return m + np.log(s)

    @njit(cache=True, nogil=True)
    def _alpha_step(e_t, prev, logA, loglam, out):
        K, D = prev.shape
        for k in range(K):
            ren = _renewal_in(prev[:, 0].copy(), logA, k)
            for d in range(D):
                dec = prev[k, d + 1] if d + 1 < D else NEG_INF
                out[k, d] = e_t[k] + _lse2(loglam[k, d] + ren, dec)

    @njit(cache=True, nogil=True)
    def _beta_step(e_next, beta_next, logA, loglam, out):
        K, D = beta_next.shape
        # s[k'] = logsumexp_d(loglam[k', d] + beta_next[k', d])
        s = np.empty(K)
        for k in range(K):
            m = NEG_INF
            for d in range(D):
                v = loglam[k, d] + beta_next[k, d]
                if v > m:
                    m = v
            if m == NEG_INF:
                s[k] = NEG_INF
            else:
                acc = 0.0
                for d in range(D):
                    acc += np.exp(loglam[k, d] + beta_next[k, d] - m)
                s[k] = m + np.log(acc)
        for k in range(K):
            m = NEG_INF
            for kk in range(K):
                v = logA[k, kk] + e_next[kk] + s[kk]
                if v > m:
                    m = v
            if m == NEG_INF:
                out[k, 0] = NEG_INF
            else:
                acc = 0.0
                for kk in range(K):
                    acc += np.exp(logA[k, kk] + e_next[kk] + s[kk] - m)
                out[k, 0] = m + np.log(acc)
            for d in range(1, D):
                out[k, d] = e_next[k] + beta_next[k, d - 1]

    @jit
    def _forward_pass(E, logpi, logA, loglam, stride, ckpts, final):
        T, K = E.shape
        D = loglam.shape[1]
        cur = np.empty((K, D))
        nxt = np.empty((K, D))
        for k in range(K):
            for d in range(D):
                cur[k, d] = logpi[k] + loglam[k, d] + E[0, k]
        ckpts[0] = cur
        for t in range(1, T):
            _alpha_step(E[t], cur, logA, loglam, nxt)
            tmp = cur
            cur = nxt
            nxt = tmp
            if t % stride == 0:
                ckpts[t // stride] = cur
        final[:] = cur
        m = NEG_INF
        for k in range(K):
            for d in range(D):
                if cur[k, d] > m:
                    m = cur[k, d]
        if m == NEG_INF:
            return NEG_INF
        s = 0.0
        for k in range(K):
            for d in range(D):
                s += np.exp(cur[k, d] - m)
        return m + np.log(s)

    @jit
    def _forward_segment(E, logA, loglam, t0, alpha0, out):
        out[0] = alpha0
        for i in range(1, out.shape[0]):
            _alpha_step(E[t0 + i], out[i - 1], logA, loglam, out[i])

    @jit
    def _beta_step_into(e_next, beta_next, logA, loglam, out):
        _beta_step(e_next, beta_next, logA, loglam, out)

    @jit
    def _backward_stats_segment(E, logA, loglam, a, b, alpha_seg, beta_entry,
                                loglik, gamma, xi_agg, dur_stats, beta_exit):
        K, D = beta_entry.shape
        beta_t = beta_entry.copy()
        beta_nx = np.empty((K, D))
        for t in range(b, a, -1):
            arow = alpha_seg[t - a]
            aprev0 = alpha_seg[t - 1 - a][:, 0].copy()
            for k in range(K):
                g = 0.0
                for d in range(D):
                    g += np.exp(arow[k, d] + beta_t[k, d] - loglik)
                gamma[t, k] = g
            for k in range(K):
                rt = _renewal_in(aprev0, logA, k)
                vm = NEG_INF
                for d in range(D):
                    v = loglam[k, d] + E[t, k] + beta_t[k, d] - loglik
                    dur_stats[k, d] += np.exp(rt + v)
                    if v > vm:
                        vm = v
                if vm > NEG_INF:
                    acc = 0.0
                    for d in range(D):
                        acc += np.exp(loglam[k, d] + E[t, k] + beta_t[k, d] - loglik - vm)
                    vt = vm + np.log(acc)
                    for j in range(K):
                        xi_agg[j, k] += np.exp(aprev0[j] + logA[j, k] + vt)
            _beta_step(E[t], beta_t, logA, loglam, beta_nx)
            tmp = beta_t
            beta_t = beta_nx
            beta_nx = tmp
        beta_exit[:] = beta_t

    @jit
    def _viterbi_pass(E, logpi, logA, loglam, flags, renarg, final):
        T, K = E.shape
        D = loglam.shape[1]
        cur = np.empty((K, D))
        nxt = np.empty((K, D))
        for k in range(K):
            for d in range(D):
                cur[k, d] = logpi[k] + loglam[k, d] + E[0, k]
        for t in range(1, T):
            for k in range(K):
                bj = 0
                bs = NEG_INF
                for j in range(K):
                    v = cur[j, 0] + logA[j, k]
                    if v > bs:
                        bs = v
                        bj = j
                renarg[t, k] = bj
                for d in range(D):
                    ren = loglam[k, d] + bs
                    dec = cur[k, d + 1] if d + 1 < D else NEG_INF
                    if ren > dec or (ren == dec and bj <= k):
                        nxt[k, d] = E[t, k] + ren
                        flags[t, k, d] = 1
                    else:
                        nxt[k, d] = E[t, k] + dec
                        flags[t, k, d] = 0
            tmp = cur
            cur = nxt
            nxt = tmp
        final[:] = cur

    return {
        "forward_pass": _forward_pass,
        "forward_segment": _forward_segment,
        "beta_step_into": _beta_step_into,
        "backward_stats_segment": _backward_stats_segment,
        "viterbi_pass": _viterbi_pass,
    }


_NUMPY_BACKEND = {
    "forward_pass": _forward_pass_np,
    "forward_segment": _forward_segment_np,
    "beta_step_into": _beta_step_into_np,
    "backward_stats_segment": _backward_stats_segment_np,
    "viterbi_pass": _viterbi_pass_np,
}

BACKENDS: dict[str, dict] = {"numpy": _NUMPY_BACKEND}


def _select_backend() -> str:
    flag = os.environ.get("ARHSMM_NUMBA", "").strip()
    if flag == "0":
        return "numpy"
    try:
        BACKENDS["numba"] = _build_numba_backend()
        return "numba"
    except ImportError:
        if flag == "1":
            raise
        return "numpy"


_ACTIVE = _select_backend()


def backend_name() -> str:
    """Name of the backend serving the module-level kernel aliases."""
    return _ACTIVE


forward_pass = BACKENDS[_ACTIVE]["forward_pass"]
forward_segment = BACKENDS[_ACTIVE]["forward_segment"]
beta_step_into = BACKENDS[_ACTIVE]["beta_step_into"]
backward_stats_segment = BACKENDS[_ACTIVE]["backward_stats_segment"]
viterbi_pass = BACKENDS[_ACTIVE]["viterbi_pass"]
