"""Numpy reference implementation of the two-anchor Sinkhorn kernel.

Same contract as the compiled extension module; used as the import-time
fallback and as the ground truth the extension is tested against. Source
points carry mass 1/n; the two anchor columns carry ((n-k)/n, k/n).
All iterations run in the log domain.
"""
from __future__ import annotations

import numpy as np

BACKEND = "numpy"


def _cost(s: np.ndarray, a0: float, a1: float) -> np.ndarray:
    return np.stack([(s - a0) ** 2, (s - a1) ** 2], axis=1)


def solve(
    s: np.ndarray,
    a0: float,
    a1: float,
    k: int,
    eps: float,
    max_iters: int,
    tol: float,
) -> tuple[np.ndarray, np.ndarray, int, float, bool]:
    """Run Sinkhorn, recording dual potentials per iteration.

    Returns (f_hist, g_hist, n_iters, marginal_err, converged); f_hist[t]
    and g_hist[t] are the potentials after iteration t+1.
    """
    n = s.shape[0]
    C = _cost(s, a0, a1)
    log_mu = -np.log(n)
    log_nu = np.log(np.array([(n - k) / n, k / n]))

    f_hist = np.zeros((max_iters, n))
    g_hist = np.zeros((max_iters, 2))
    g = np.zeros(2)
    err = np.inf
    n_iters = 0
    for t in range(max_iters):
        A = (g[None, :] - C) / eps
        f = eps * log_mu - eps * _lse(A, axis=1)
        B = (f[:, None] - C) / eps
        g = eps * log_nu - eps * _lse(B, axis=0)
        f_hist[t] = f
        g_hist[t] = g
        n_iters = t + 1
        row = np.exp((f[:, None] + g[None, :] - C) / eps).sum(axis=1)
        err = np.abs(row - 1.0 / n).sum()
        if err < tol:
            break
    return f_hist[:n_iters], g_hist[:n_iters], n_iters, float(err), bool(err < tol)


def plan(s: np.ndarray, a0: float, a1: float, eps: float, f: np.ndarray, g: np.ndarray) -> np.ndarray:
    C = _cost(s, a0, a1)
    return np.exp((f[:, None] + g[None, :] - C) / eps)


def vjp(
    s: np.ndarray,
    a0: float,
    a1: float,
    k: int,
    eps: float,
    f_hist: np.ndarray,
    g_hist: np.ndarray,
    upstream: np.ndarray,
) -> np.ndarray:
    """Reverse-mode pass through the recorded iterations.

    ``upstream`` is dL/d alpha where alpha = n * plan[:, 1]; anchors are
    treated as constants. Returns dL/d s.
    """
    n = s.shape[0]
    T = f_hist.shape[0]
    C = _cost(s, a0, a1)
    nu = np.array([(n - k) / n, k / n])

    f_T, g_T = f_hist[T - 1], g_hist[T - 1]
    gamma1 = np.exp((f_T + g_T[1] - C[:, 1]) / eps)
    seed = n * np.asarray(upstream, dtype=np.float64) * gamma1 / eps

    df = seed.copy()
    dg = np.array([0.0, seed.sum()])
    dC = np.zeros((n, 2))
    dC[:, 1] = -seed

    for t in range(T - 1, -1, -1):
        f_t = f_hist[t]
        g_prev = g_hist[t - 1] if t > 0 else np.zeros(2)
        # undo the g-update: g = eps*log(nu) - eps*LSE_i((f - C)/eps)
        SB = np.exp((f_t[:, None] + g_hist[t][None, :] - C) / eps) / nu[None, :]
        df -= SB @ dg
        dC += SB * dg[None, :]
        # undo the f-update: f = eps*log(mu) - eps*LSE_j((g_prev - C)/eps)
        SA = np.exp((f_t[:, None] + g_prev[None, :] - C) / eps) * n
        dg = -(SA * df[:, None]).sum(axis=0)
        dC += SA * df[:, None]
        df = np.zeros(n)
    return dC[:, 0] * 2.0 * (s - a0) + dC[:, 1] * 2.0 * (s - a1)


def _lse(x: np.ndarray, axis: int) -> np.ndarray:
    m = x.max(axis=axis, keepdims=True)
    return (m + np.log(np.exp(x - m).sum(axis=axis, keepdims=True))).squeeze(axis)


def solve_many(s, offsets, ks, eps, a0s, a1s, max_iters, tol):
    """Batched solve over concatenated lists; histories padded to max_iters.

    Returns (f_hist (m, T, n_max), g_hist (m, T, 2), n_iters (m,), errs (m,),
    converged (m,), alpha (N,)) with T = max_iters."""
    m = offsets.shape[0] - 1
    n_max = int(np.max(offsets[1:] - offsets[:-1])) if m else 0
    f_hist = np.zeros((m, max_iters, n_max))
    g_hist = np.zeros((m, max_iters, 2))
    n_iters = np.zeros(m, dtype=np.int64)
    errs = np.zeros(m)
    converged = np.zeros(m, dtype=np.uint8)
    alpha = np.zeros(s.shape[0])
    for i in range(m):
        lo, hi = int(offsets[i]), int(offsets[i + 1])
        n = hi - lo
        fh, gh, it, err, conv = solve(s[lo:hi], a0s[i], a1s[i], int(ks[i]), eps[i], max_iters, tol)
        f_hist[i, :it, :n] = fh
        g_hist[i, :it] = gh
        n_iters[i] = it
        errs[i] = err
        converged[i] = conv
        P = plan(s[lo:hi], a0s[i], a1s[i], eps[i], fh[it - 1], gh[it - 1])
        alpha[lo:hi] = n * P[:, 1]
    return f_hist, g_hist, n_iters, errs, converged, alpha


def vjp_many(s, offsets, ks, eps, a0s, a1s, f_hist, g_hist, n_iters, upstream):
    ds = np.zeros(s.shape[0])
    for i in range(offsets.shape[0] - 1):
        lo, hi = int(offsets[i]), int(offsets[i + 1])
        n = hi - lo
        it = int(n_iters[i])
        ds[lo:hi] = vjp(
            s[lo:hi],
            a0s[i],
            a1s[i],
            int(ks[i]),
            eps[i],
            f_hist[i, :it, :n],
            g_hist[i, :it],
            upstream[lo:hi],
        )
    return ds
