# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the simulator and panel kernels.

Semantics are defined by ``_kernels_py``; expression order is kept identical
so that simulator output matches it bit for bit.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport log, INFINITY

cnp.import_array()

cdef double PRECISION_FLOOR = 1e-12


cdef inline void _update(double* mu, double* pi, double truth, double noise,
                         double sd, double prec) noexcept nogil:
    cdef double x = truth + sd * noise
    cdef double new_mu = (pi[0] * mu[0] + x * prec) / (pi[0] + prec)
    mu[0] = new_mu
    pi[0] = pi[0] + prec


def simulate_block(double[:, ::1] mu_L, double[:, ::1] pi_L, const double[:, ::1] th_L,
                   double[:, ::1] mu_S, double[:, ::1] pi_S, const double[:, ::1] th_S,
                   portfolio, const cnp.int64_t[::1] ai_start,
                   const double[:, :, ::1] eps_L, const double[:, :, ::1] z_L,
                   const double[:, :, ::1] eps_S, const double[:, :, ::1] z_S, c):
    cdef Py_ssize_t n = eps_L.shape[0], T = eps_L.shape[1], K = eps_L.shape[2]
    cdef Py_ssize_t S = eps_S.shape[2]
    cdef double inv_noise = c.inv_noise, sd_noise = c.sd_noise
    cdef double ai_prec = c.ai_prec, ai_sd = c.ai_sd
    cdef bint ai_means = c.ai_updates_means
    cdef double half_rho = c.half_rho, threshold = c.threshold
    cdef double entry_cost = c.entry_cost, c0 = c.repo_base_cost
    cdef Py_ssize_t cap = c.repo_cap

    port_np = np.ascontiguousarray(portfolio, dtype=np.uint8).copy()
    cdef cnp.uint8_t[:, ::1] port = port_np
    port_hist_np = np.zeros((n, T, K), dtype=np.uint8)
    repo_hist_np = np.zeros((n, T, K, S), dtype=np.uint8)
    prec_hist_np = np.empty((n, T, K), dtype=np.float64)
    cdef cnp.uint8_t[:, :, ::1] port_hist = port_hist_np
    cdef cnp.uint8_t[:, :, :, ::1] repo_hist = repo_hist_np
    cdef double[:, :, ::1] prec_hist = prec_hist_np

    cdef cnp.uint8_t[::1] active_sec = np.zeros(S, dtype=np.uint8)
    cdef double[::1] margin = np.empty(K * S, dtype=np.float64)
    cdef cnp.uint8_t[::1] valid = np.zeros(K * S, dtype=np.uint8)
    cdef cnp.uint8_t[::1] keep = np.zeros(K * S, dtype=np.uint8)

    cdef Py_ssize_t i, t, k, s, j, best, count, picked
    cdef double util, bar, cost, m, best_m
    cdef bint ai

    with nogil:
        for i in range(n):
            for s in range(S):
                active_sec[s] = 0
            for t in range(T):
                ai = ai_start[i] <= t + 1
                for k in range(K):
                    if port[i, k]:
                        _update(&mu_L[i, k], &pi_L[i, k], th_L[i, k], eps_L[i, t, k], sd_noise, inv_noise)
                for s in range(S):
                    if active_sec[s]:
                        _update(&mu_S[i, s], &pi_S[i, s], th_S[i, s], eps_S[i, t, s], sd_noise, inv_noise)
                if ai_prec > 0 and ai:
                    if ai_means:
                        for k in range(K):
                            _update(&mu_L[i, k], &pi_L[i, k], th_L[i, k], z_L[i, t, k], ai_sd, ai_prec)
                        for s in range(S):
                            _update(&mu_S[i, s], &pi_S[i, s], th_S[i, s], z_S[i, t, s], ai_sd, ai_prec)
                    else:
                        for k in range(K):
                            pi_L[i, k] = pi_L[i, k] + ai_prec
                        for s in range(S):
                            pi_S[i, s] = pi_S[i, s] + ai_prec
                for k in range(K):
                    if pi_L[i, k] < PRECISION_FLOOR:
                        pi_L[i, k] = PRECISION_FLOOR
                for s in range(S):
                    if pi_S[i, s] < PRECISION_FLOOR:
                        pi_S[i, s] = PRECISION_FLOOR
                for k in range(K):
                    util = mu_L[i, k] - half_rho / pi_L[i, k]
                    if port[i, k]:
                        bar = threshold
                    else:
                        bar = threshold - entry_cost
                    port[i, k] = util > bar

                count = 0
                for k in range(K):
                    for s in range(S):
                        j = k * S + s
                        cost = (c0 + half_rho / pi_L[i, k]) + half_rho / pi_S[i, s]
                        m = (mu_L[i, k] + mu_S[i, s]) - cost
                        margin[j] = m
                        valid[j] = (m > 0) and port[i, k]
                        count += valid[j]
                if count > cap:
                    for j in range(K * S):
                        keep[j] = 0
                    for picked in range(cap):
                        best = -1
                        best_m = -INFINITY
                        for j in range(K * S):
                            if valid[j] and not keep[j]:
                                if best < 0 or margin[j] > best_m:
                                    best = j
                                    best_m = margin[j]
                        keep[best] = 1
                    for j in range(K * S):
                        valid[j] = keep[j]

                for s in range(S):
                    active_sec[s] = 0
                for k in range(K):
                    port_hist[i, t, k] = port[i, k]
                    prec_hist[i, t, k] = pi_L[i, k]
                    for s in range(S):
                        j = k * S + s
                        repo_hist[i, t, k, s] = valid[j]
                        if valid[j]:
                            active_sec[s] = 1

    portfolio[...] = port_np.astype(bool)
    return port_hist_np, repo_hist_np, prec_hist_np


def panel_outcomes(const cnp.int64_t[::1] dev, const cnp.int64_t[::1] month,
                   const cnp.int64_t[::1] repo, const cnp.int64_t[::1] lang,
                   const cnp.int64_t[::1] sector, const cnp.int64_t[::1] commits,
                   Py_ssize_t n_dev, Py_ssize_t n_months, Py_ssize_t n_lang):
    out_np = np.zeros((n_dev, n_months, 7), dtype=np.float64)
    cdef double[:, :, ::1] out = out_np
    cdef Py_ssize_t n_rec = dev.shape[0]
    if n_rec == 0:
        return out_np
    cdef Py_ssize_t n_repo = 0, n_sector = 0, r
    for r in range(n_rec):
        if repo[r] + 1 > n_repo:
            n_repo = repo[r] + 1
        if sector[r] + 1 > n_sector:
            n_sector = sector[r] + 1
    # stamps hold (cell index + 1) for the last cell that touched a code
    cdef cnp.int64_t[::1] repo_stamp = np.zeros(n_repo, dtype=np.int64)
    cdef cnp.int64_t[::1] sector_stamp = np.zeros(n_sector, dtype=np.int64)
    cdef cnp.int64_t[::1] lang_seen = np.zeros(n_lang, dtype=np.int64)

    cdef Py_ssize_t a, b, i, t, l, d, g_start
    cdef cnp.int64_t cell_id, total, lc
    cdef double acc, p
    cdef Py_ssize_t n_groups

    with nogil:
        a = 0
        while a < n_rec:
            d = dev[a]
            t = month[a]
            b = a
            while b < n_rec and dev[b] == d and month[b] == t:
                b += 1
            cell_id = d * n_months + t + 1
            total = 0
            for r in range(a, b):
                total += commits[r]
                if repo_stamp[repo[r]] != cell_id:
                    repo_stamp[repo[r]] = cell_id
                    out[d, t, 1] += 1
                if sector_stamp[sector[r]] != cell_id:
                    sector_stamp[sector[r]] = cell_id
                    out[d, t, 6] += 1
            out[d, t, 0] = <double>total
            acc = 0.0
            n_groups = 0
            r = a
            while r < b:
                l = lang[r]
                lc = 0
                g_start = r
                while r < b and lang[r] == l:
                    lc += commits[r]
                    r += 1
                n_groups += 1
                p = <double>lc / <double>total
                acc += p * log(p)
                if lang_seen[l] != d + 1:
                    lang_seen[l] = d + 1
                    out[d, t, 4] += 1
            out[d, t, 2] = <double>n_groups
            out[d, t, 3] = 0.0 - acc
            a = b
        for i in range(n_dev):
            acc = 0.0
            for t in range(n_months):
                acc += out[i, t, 4]
                out[i, t, 5] = acc
    return out_np
