"""Pure numpy implementation of the hot loops.

Two kernels live here and in the compiled ``_kernels`` extension:

``simulate_block``
    runs a population of developers through calendar months given
    pre-drawn standard-normal innovations;
``panel_outcomes``
    folds sorted commit records into per developer-month outcomes.

Both implementations use the same floating point expression order, so the
simulator output is bit-identical across backends.  Entropy goes through
``log`` and may differ in the last ulp.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

PRECISION_FLOOR = 1e-12


@dataclass(frozen=True)
class StepConstants:
    inv_noise: float
    sd_noise: float
    ai_prec: float
    ai_sd: float
    ai_updates_means: bool
    half_rho: float
    threshold: float
    entry_cost: float
    repo_base_cost: float
    repo_cap: int

    @classmethod
    def from_params(cls, p):
        ai_prec = p.ai_signal_count / p.ai_signal_var
        ai_sd = math.sqrt(p.ai_signal_var / p.ai_signal_count) if p.ai_signal_count > 0 else 0.0
        return cls(
            inv_noise=1.0 / p.signal_noise_var,
            sd_noise=math.sqrt(p.signal_noise_var),
            ai_prec=ai_prec,
            ai_sd=ai_sd,
            ai_updates_means=bool(p.ai_updates_means),
            half_rho=0.5 * p.risk_aversion,
            threshold=p.entry_threshold,
            entry_cost=p.entry_cost,
            repo_base_cost=p.repo_base_cost,
            repo_cap=int(p.repo_cap),
        )


def _signal_update(mu, pi, truth, noise, sd, prec, mask):
    # in place on the rows/cols selected by mask
    x = truth + sd * noise
    new_mu = (pi * mu + x * prec) / (pi + prec)
    np.copyto(mu, new_mu, where=mask)
    np.copyto(pi, pi + prec, where=mask)


def step_batch(mu_L, pi_L, th_L, mu_S, pi_S, th_S, portfolio, active_sectors, ai, eps_L, z_L, eps_S, z_S, c):
    """One month of belief updates and portfolio choice for a batch, in place.

    ``portfolio`` holds the previous portfolio on entry and the new one on
    exit.  ``active_sectors`` is read only.
    """
    _signal_update(mu_L, pi_L, th_L, eps_L, c.sd_noise, c.inv_noise, portfolio)
    _signal_update(mu_S, pi_S, th_S, eps_S, c.sd_noise, c.inv_noise, active_sectors)
    if c.ai_prec > 0 and ai.any():
        rows = ai[:, None]
        if c.ai_updates_means:
            _signal_update(mu_L, pi_L, th_L, z_L, c.ai_sd, c.ai_prec, np.broadcast_to(rows, mu_L.shape))
            _signal_update(mu_S, pi_S, th_S, z_S, c.ai_sd, c.ai_prec, np.broadcast_to(rows, mu_S.shape))
        else:
            np.copyto(pi_L, pi_L + c.ai_prec, where=rows)
            np.copyto(pi_S, pi_S + c.ai_prec, where=rows)
    np.maximum(pi_L, PRECISION_FLOOR, out=pi_L)
    np.maximum(pi_S, PRECISION_FLOOR, out=pi_S)
    util = mu_L - c.half_rho / pi_L
    bar = np.where(portfolio, c.threshold, c.threshold - c.entry_cost)
    portfolio[...] = util > bar


def choose_repos(mu_L, pi_L, mu_S, pi_S, portfolio, c):
    """Active (language, sector) pairs, capped at ``repo_cap`` by margin.

    Returns a bool array of shape (n, K, S).  Ties in the cap break toward the
    lower flat index ``k * S + s``.
    """
    n, K = mu_L.shape
    S = mu_S.shape[1]
    cost = (c.repo_base_cost + c.half_rho / pi_L)[:, :, None] + (c.half_rho / pi_S)[:, None, :]
    margin = (mu_L[:, :, None] + mu_S[:, None, :]) - cost
    valid = (margin > 0) & portfolio[:, :, None]
    counts = valid.reshape(n, -1).sum(axis=1)
    over = counts > c.repo_cap
    if over.any():
        flat = np.where(valid, margin, -np.inf).reshape(n, -1)[over]
        order = np.argsort(-flat, axis=1, kind="stable")
        rank = np.empty_like(order)
        rank[np.arange(order.shape[0])[:, None], order] = np.arange(K * S)[None, :]
        keep = (rank < c.repo_cap) & valid.reshape(n, -1)[over]
        sub = valid.reshape(n, -1)
        sub[over] = keep
        valid = sub.reshape(n, K, S)
    return valid


def simulate_block(mu_L, pi_L, th_L, mu_S, pi_S, th_S, portfolio, ai_start, eps_L, z_L, eps_S, z_S, c):
    """Run ``T`` months for ``n`` developers.

    State arrays (n, K) / (n, S) are updated in place.  Month ``m`` (1-based)
    is AI-active for developer ``i`` iff ``m >= ai_start[i]``.

    Returns
    -------
    port_hist : uint8 array (n, T, K)
    repo_hist : uint8 array (n, T, K, S)
    prec_hist : float64 array (n, T, K), language precision after each month
    """
    n, T, K = eps_L.shape
    S = eps_S.shape[2]
    port = portfolio.astype(bool).copy()
    active_sec = np.zeros((n, S), dtype=bool)
    port_hist = np.zeros((n, T, K), dtype=np.uint8)
    repo_hist = np.zeros((n, T, K, S), dtype=np.uint8)
    prec_hist = np.empty((n, T, K), dtype=np.float64)
    for t in range(T):
        ai = ai_start <= t + 1
        step_batch(mu_L, pi_L, th_L, mu_S, pi_S, th_S, port, active_sec, ai,
                   eps_L[:, t], z_L[:, t], eps_S[:, t], z_S[:, t], c)
        repos = choose_repos(mu_L, pi_L, mu_S, pi_S, port, c)
        active_sec = repos.any(axis=1)
        port_hist[:, t] = port
        repo_hist[:, t] = repos
        prec_hist[:, t] = pi_L
    portfolio[...] = port
    return port_hist, repo_hist, prec_hist


def panel_outcomes(dev, month, repo, lang, sector, commits, n_dev, n_months, n_lang):
    """Aggregate records into developer-month outcomes.

    Records must be sorted by (dev, month, lang) with duplicates already
    merged; ``dev``/``month``/``repo``/``lang``/``sector`` are 0-based codes.

    Returns an (n_dev, n_months, 7) float64 array with columns n_commits,
    n_repos, n_languages, language_entropy, n_new_languages,
    cumulative_languages, n_sectors.
    """
    out = np.zeros((n_dev, n_months, 7))
    if len(dev) == 0:
        return out
    cell = dev.astype(np.int64) * n_months + month
    np.add.at(out[..., 0].reshape(-1), cell, commits)

    def distinct_per_cell(code):
        key = np.unique(cell * (int(code.max()) + 1) + code)
        cnt = np.bincount(key // (int(code.max()) + 1), minlength=n_dev * n_months)
        return cnt

    out[..., 1] = distinct_per_cell(repo).reshape(n_dev, n_months)
    out[..., 2] = distinct_per_cell(lang).reshape(n_dev, n_months)
    out[..., 6] = distinct_per_cell(sector).reshape(n_dev, n_months)

    # commits per (cell, lang); records are sorted so groups are contiguous
    key = cell * n_lang + lang
    starts = np.flatnonzero(np.r_[True, key[1:] != key[:-1]])
    lang_commits = np.add.reduceat(commits.astype(np.float64), starts)
    g_cell = cell[starts]
    totals = out[..., 0].reshape(-1)[g_cell]
    p = lang_commits / totals
    plogp = p * np.log(p)
    H = np.zeros(n_dev * n_months)
    cell_starts = np.flatnonzero(np.r_[True, g_cell[1:] != g_cell[:-1]])
    H[g_cell[cell_starts]] = 0.0 - np.add.reduceat(plogp, cell_starts)
    out[..., 3] = H.reshape(n_dev, n_months)

    # first month each (dev, lang) appears
    dl = dev.astype(np.int64) * n_lang + lang
    order = np.lexsort((month, dl))
    dl_sorted = dl[order]
    first = np.r_[True, dl_sorted[1:] != dl_sorted[:-1]]
    first_dev = dev[order][first]
    first_month = month[order][first]
    new = np.zeros((n_dev, n_months))
    np.add.at(new, (first_dev, first_month), 1.0)
    out[..., 4] = new
    out[..., 5] = np.cumsum(new, axis=1)
    return out
