# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled two-anchor Sinkhorn kernel (log domain) with unrolled reverse pass.

Mirrors reference.py exactly; the test suite checks the two backends agree.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport exp, fabs, log

cnp.import_array()

BACKEND = "compiled"


def solve(
    cnp.ndarray[cnp.float64_t, ndim=1] s,
    double a0,
    double a1,
    int k,
    double eps,
    int max_iters,
    double tol,
):
    cdef int n = s.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] f_hist = np.zeros((max_iters, n))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] g_hist = np.zeros((max_iters, 2))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] C = np.empty((n, 2))
    cdef double log_mu = -log(n)
    cdef double log_nu0 = log((n - k) / <double> n)
    cdef double log_nu1 = log(k / <double> n)
    cdef double g0 = 0.0, g1 = 0.0
    cdef double err = 0.0, m, acc0, acc1, x0, x1, fi, row
    cdef int t, i, n_iters = 0
    cdef bint converged = 0

    for i in range(n):
        C[i, 0] = (s[i] - a0) * (s[i] - a0)
        C[i, 1] = (s[i] - a1) * (s[i] - a1)

    for t in range(max_iters):
        acc0 = 0.0
        acc1 = 0.0
        for i in range(n):
            x0 = (g0 - C[i, 0]) / eps
            x1 = (g1 - C[i, 1]) / eps
            m = x0 if x0 > x1 else x1
            fi = eps * log_mu - eps * (m + log(exp(x0 - m) + exp(x1 - m)))
            f_hist[t, i] = fi
        # column log-sum-exp for the g update
        m = -1e308
        for i in range(n):
            x0 = (f_hist[t, i] - C[i, 0]) / eps
            if x0 > m:
                m = x0
        for i in range(n):
            acc0 += exp((f_hist[t, i] - C[i, 0]) / eps - m)
        g0 = eps * log_nu0 - eps * (m + log(acc0))
        m = -1e308
        for i in range(n):
            x1 = (f_hist[t, i] - C[i, 1]) / eps
            if x1 > m:
                m = x1
        acc1 = 0.0
        for i in range(n):
            acc1 += exp((f_hist[t, i] - C[i, 1]) / eps - m)
        g1 = eps * log_nu1 - eps * (m + log(acc1))
        g_hist[t, 0] = g0
        g_hist[t, 1] = g1
        n_iters = t + 1
        err = 0.0
        for i in range(n):
            row = exp((f_hist[t, i] + g0 - C[i, 0]) / eps) + exp((f_hist[t, i] + g1 - C[i, 1]) / eps)
            err += fabs(row - 1.0 / n)
        if err < tol:
            converged = 1
            break
    return f_hist[:n_iters], g_hist[:n_iters], n_iters, err, bool(converged)


def plan(
    cnp.ndarray[cnp.float64_t, ndim=1] s,
    double a0,
    double a1,
    double eps,
    cnp.ndarray[cnp.float64_t, ndim=1] f,
    cnp.ndarray[cnp.float64_t, ndim=1] g,
):
    cdef int n = s.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] P = np.empty((n, 2))
    cdef int i
    for i in range(n):
        P[i, 0] = exp((f[i] + g[0] - (s[i] - a0) * (s[i] - a0)) / eps)
        P[i, 1] = exp((f[i] + g[1] - (s[i] - a1) * (s[i] - a1)) / eps)
    return P


def vjp(
    cnp.ndarray[cnp.float64_t, ndim=1] s,
    double a0,
    double a1,
    int k,
    double eps,
    cnp.ndarray[cnp.float64_t, ndim=2] f_hist,
    cnp.ndarray[cnp.float64_t, ndim=2] g_hist,
    cnp.ndarray[cnp.float64_t, ndim=1] upstream,
):
    cdef int n = s.shape[0]
    cdef int T = f_hist.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] C = np.empty((n, 2))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] dC = np.zeros((n, 2))
    cdef cnp.ndarray[cnp.float64_t, ndim=1] df = np.zeros(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ds = np.empty(n)
    cdef double nu0 = (n - k) / <double> n
    cdef double nu1 = k / <double> n
    cdef double dg0 = 0.0, dg1 = 0.0, g0, g1, gp0, gp1, sb0, sb1, sa0, sa1, seed, acc0, acc1
    cdef int t, i

    for i in range(n):
        C[i, 0] = (s[i] - a0) * (s[i] - a0)
        C[i, 1] = (s[i] - a1) * (s[i] - a1)

    g1 = g_hist[T - 1, 1]
    for i in range(n):
        seed = n * upstream[i] * exp((f_hist[T - 1, i] + g1 - C[i, 1]) / eps) / eps
        df[i] = seed
        dg1 += seed
        dC[i, 1] -= seed

    for t in range(T - 1, -1, -1):
        g0 = g_hist[t, 0]
        g1 = g_hist[t, 1]
        if t > 0:
            gp0 = g_hist[t - 1, 0]
            gp1 = g_hist[t - 1, 1]
        else:
            gp0 = 0.0
            gp1 = 0.0
        acc0 = 0.0
        acc1 = 0.0
        for i in range(n):
            sb0 = exp((f_hist[t, i] + g0 - C[i, 0]) / eps) / nu0
            sb1 = exp((f_hist[t, i] + g1 - C[i, 1]) / eps) / nu1
            df[i] -= sb0 * dg0 + sb1 * dg1
            dC[i, 0] += sb0 * dg0
            dC[i, 1] += sb1 * dg1
            sa0 = exp((f_hist[t, i] + gp0 - C[i, 0]) / eps) * n
            sa1 = exp((f_hist[t, i] + gp1 - C[i, 1]) / eps) * n
            acc0 -= sa0 * df[i]
            acc1 -= sa1 * df[i]
            dC[i, 0] += sa0 * df[i]
            dC[i, 1] += sa1 * df[i]
            df[i] = 0.0
        dg0 = acc0
        dg1 = acc1

    for i in range(n):
        ds[i] = dC[i, 0] * 2.0 * (s[i] - a0) + dC[i, 1] * 2.0 * (s[i] - a1)
    return ds


def solve_many(
    cnp.ndarray[cnp.float64_t, ndim=1] s,
    cnp.ndarray[cnp.int64_t, ndim=1] offsets,
    cnp.ndarray[cnp.int64_t, ndim=1] ks,
    cnp.ndarray[cnp.float64_t, ndim=1] eps_arr,
    cnp.ndarray[cnp.float64_t, ndim=1] a0s,
    cnp.ndarray[cnp.float64_t, ndim=1] a1s,
    int max_iters,
    double tol,
):
    """Batched two-anchor solves over concatenated score lists."""
    cdef int m = offsets.shape[0] - 1
    cdef int n_max = 0, n, lo, i, t, j, k, n_it
    for i in range(m):
        n = <int> (offsets[i + 1] - offsets[i])
        if n > n_max:
            n_max = n
    cdef cnp.ndarray[cnp.float64_t, ndim=3] f_hist = np.zeros((m, max_iters, n_max))
    cdef cnp.ndarray[cnp.float64_t, ndim=3] g_hist = np.zeros((m, max_iters, 2))
    cdef cnp.ndarray[cnp.int64_t, ndim=1] n_iters = np.zeros(m, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] errs = np.zeros(m)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] converged = np.zeros(m, dtype=np.uint8)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] alpha = np.zeros(s.shape[0])
    cdef cnp.ndarray[cnp.float64_t, ndim=2] C = np.empty((n_max, 2))
    cdef double eps, a0, a1, log_mu, log_nu0, log_nu1
    cdef double g0, g1, err, mm, acc0, acc1, x0, x1, fi, row

    for i in range(m):
        lo = <int> offsets[i]
        n = <int> (offsets[i + 1] - offsets[i])
        k = <int> ks[i]
        eps = eps_arr[i]
        a0 = a0s[i]
        a1 = a1s[i]
        log_mu = -log(n)
        log_nu0 = log((n - k) / <double> n)
        log_nu1 = log(k / <double> n)
        for j in range(n):
            C[j, 0] = (s[lo + j] - a0) * (s[lo + j] - a0)
            C[j, 1] = (s[lo + j] - a1) * (s[lo + j] - a1)
        g0 = 0.0
        g1 = 0.0
        err = 0.0
        n_it = 0
        for t in range(max_iters):
            for j in range(n):
                x0 = (g0 - C[j, 0]) / eps
                x1 = (g1 - C[j, 1]) / eps
                mm = x0 if x0 > x1 else x1
                f_hist[i, t, j] = eps * log_mu - eps * (mm + log(exp(x0 - mm) + exp(x1 - mm)))
            mm = -1e308
            for j in range(n):
                x0 = (f_hist[i, t, j] - C[j, 0]) / eps
                if x0 > mm:
                    mm = x0
            acc0 = 0.0
            for j in range(n):
                acc0 += exp((f_hist[i, t, j] - C[j, 0]) / eps - mm)
            g0 = eps * log_nu0 - eps * (mm + log(acc0))
            mm = -1e308
            for j in range(n):
                x1 = (f_hist[i, t, j] - C[j, 1]) / eps
                if x1 > mm:
                    mm = x1
            acc1 = 0.0
            for j in range(n):
                acc1 += exp((f_hist[i, t, j] - C[j, 1]) / eps - mm)
            g1 = eps * log_nu1 - eps * (mm + log(acc1))
            g_hist[i, t, 0] = g0
            g_hist[i, t, 1] = g1
            n_it = t + 1
            err = 0.0
            for j in range(n):
                row = exp((f_hist[i, t, j] + g0 - C[j, 0]) / eps) + exp((f_hist[i, t, j] + g1 - C[j, 1]) / eps)
                err += fabs(row - 1.0 / n)
            if err < tol:
                converged[i] = 1
                break
        n_iters[i] = n_it
        errs[i] = err
        for j in range(n):
            alpha[lo + j] = n * exp((f_hist[i, n_it - 1, j] + g1 - C[j, 1]) / eps)
    return f_hist, g_hist, n_iters, errs, converged, alpha


def vjp_many(
    cnp.ndarray[cnp.float64_t, ndim=1] s,
    cnp.ndarray[cnp.int64_t, ndim=1] offsets,
    cnp.ndarray[cnp.int64_t, ndim=1] ks,
    cnp.ndarray[cnp.float64_t, ndim=1] eps_arr,
    cnp.ndarray[cnp.float64_t, ndim=1] a0s,
    cnp.ndarray[cnp.float64_t, ndim=1] a1s,
    cnp.ndarray[cnp.float64_t, ndim=3] f_hist,
    cnp.ndarray[cnp.float64_t, ndim=3] g_hist,
    cnp.ndarray[cnp.int64_t, ndim=1] n_iters,
    cnp.ndarray[cnp.float64_t, ndim=1] upstream,
):
    cdef int m = offsets.shape[0] - 1
    cdef int n_max = f_hist.shape[2]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ds = np.zeros(s.shape[0])
    cdef cnp.ndarray[cnp.float64_t, ndim=2] C = np.empty((n_max, 2))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] dC = np.empty((n_max, 2))
    cdef cnp.ndarray[cnp.float64_t, ndim=1] df = np.empty(n_max)
    cdef int i, j, t, lo, n, k, T
    cdef double eps, a0, a1, nu0, nu1, g0, g1, gp0, gp1
    cdef double dg0, dg1, sb0, sb1, sa0, sa1, seed, acc0, acc1

    for i in range(m):
        lo = <int> offsets[i]
        n = <int> (offsets[i + 1] - offsets[i])
        k = <int> ks[i]
        T = <int> n_iters[i]
        eps = eps_arr[i]
        a0 = a0s[i]
        a1 = a1s[i]
        nu0 = (n - k) / <double> n
        nu1 = k / <double> n
        for j in range(n):
            C[j, 0] = (s[lo + j] - a0) * (s[lo + j] - a0)
            C[j, 1] = (s[lo + j] - a1) * (s[lo + j] - a1)
            dC[j, 0] = 0.0
            dC[j, 1] = 0.0
        dg0 = 0.0
        dg1 = 0.0
        g1 = g_hist[i, T - 1, 1]
        for j in range(n):
            seed = n * upstream[lo + j] * exp((f_hist[i, T - 1, j] + g1 - C[j, 1]) / eps) / eps
            df[j] = seed
            dg1 += seed
            dC[j, 1] -= seed
        for t in range(T - 1, -1, -1):
            g0 = g_hist[i, t, 0]
            g1 = g_hist[i, t, 1]
            if t > 0:
                gp0 = g_hist[i, t - 1, 0]
                gp1 = g_hist[i, t - 1, 1]
            else:
                gp0 = 0.0
                gp1 = 0.0
            acc0 = 0.0
            acc1 = 0.0
            for j in range(n):
                sb0 = exp((f_hist[i, t, j] + g0 - C[j, 0]) / eps) / nu0
                sb1 = exp((f_hist[i, t, j] + g1 - C[j, 1]) / eps) / nu1
                df[j] -= sb0 * dg0 + sb1 * dg1
                dC[j, 0] += sb0 * dg0
                dC[j, 1] += sb1 * dg1
                sa0 = exp((f_hist[i, t, j] + gp0 - C[j, 0]) / eps) * n
                sa1 = exp((f_hist[i, t, j] + gp1 - C[j, 1]) / eps) * n
                acc0 -= sa0 * df[j]
                acc1 -= sa1 * df[j]
                dC[j, 0] += sa0 * df[j]
                dC[j, 1] += sa1 * df[j]
                df[j] = 0.0
            dg0 = acc0
            dg1 = acc1
        for j in range(n):
            ds[lo + j] = dC[j, 0] * 2.0 * (s[lo + j] - a0) + dC[j, 1] * 2.0 * (s[lo + j] - a1)
    return ds
