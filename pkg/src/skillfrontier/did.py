"""Group-time average treatment effects for staggered adoption.

Each ATT(g, t) is a 2x2 comparison between cohort ``g`` and a comparison
group over periods ``b`` and ``t``.  Estimates come with per-developer
influence values scaled to the full panel, so that
``se = sqrt(mean(psi**2) / n)`` and aggregations are linear in ``psi``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

from .errors import RankDeficientError, SeparationError, ValidationError

CONTROL_GROUPS = ("not-yet-treated", "never-treated")
BASE_PERIODS = ("varying", "universal")
ESTIMATIONS = ("doubly-robust", "unconditional")
OVERLAP_EPS = 1e-3
SEPARATION_EPS = 1e-10


@dataclass(frozen=True)
class Design:
    anticipation: int = 1
    control_group: str = "not-yet-treated"
    base_period: str = "varying"
    estimation: str = "doubly-robust"
    covariates: tuple = ()

    def __post_init__(self):
        if not isinstance(self.anticipation, (int, np.integer)) or self.anticipation < 0:
            raise ValidationError(f"anticipation must be a nonnegative integer, got {self.anticipation!r}")
        if self.control_group not in CONTROL_GROUPS:
            raise ValidationError(f"control_group must be one of {CONTROL_GROUPS}")
        if self.base_period not in BASE_PERIODS:
            raise ValidationError(f"base_period must be one of {BASE_PERIODS}")
        if self.estimation not in ESTIMATIONS:
            raise ValidationError(f"estimation must be one of {ESTIMATIONS}")
        object.__setattr__(self, "covariates", tuple(self.covariates))

    def echo(self):
        d = asdict(self)
        d["covariates"] = list(self.covariates)
        return d


# ----------------------------------------------------------------------------
# nuisance models


@dataclass
class PropensityFit:
    coef: np.ndarray
    fitted: np.ndarray
    n_iter: int
    converged: bool


def _with_intercept(x, n):
    if x is None:
        return np.ones((n, 1))
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return np.column_stack([np.ones(n), x])


def _check_rank(X, what):
    if X.shape[0] < X.shape[1] or np.linalg.matrix_rank(X) < X.shape[1]:
        raise RankDeficientError(f"{what} design matrix is rank deficient ({X.shape[0]} x {X.shape[1]})")


def fit_propensity(covariates, treated, names=None, tol=1e-8, max_iter=100):
    """Logistic regression of ``treated`` on covariates by IRLS.

    An intercept is prepended.  Iteration stops when the largest coefficient
    change drops below ``tol`` or after ``max_iter`` steps.  Fitted
    probabilities within 1e-10 of 0 or 1 raise :class:`SeparationError`
    naming the covariate with the largest coefficient.
    """
    y = np.asarray(treated, dtype=float).ravel()
    n = y.size
    X = _with_intercept(covariates, n)
    _check_rank(X, "propensity")
    p_names = ["(intercept)"] + list(names if names is not None else [f"x{j}" for j in range(1, X.shape[1])])

    ybar = y.mean()
    if ybar <= 0 or ybar >= 1:
        raise SeparationError("(intercept)", "treatment indicator has no variation")
    beta = np.zeros(X.shape[1])
    beta[0] = math.log(ybar / (1 - ybar))
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        eta = X @ beta
        p = expit(eta)
        w = p * (1 - p)
        if np.any(w <= 0):
            break
        grad = X.T @ (y - p)
        hess = X.T @ (w[:, None] * X)
        step = np.linalg.solve(hess, grad)
        beta = beta + step
        if np.max(np.abs(step)) < tol:
            converged = True
            break
    fitted = expit(X @ beta)
    if np.any(fitted < SEPARATION_EPS) or np.any(fitted > 1 - SEPARATION_EPS):
        j = 1 + int(np.argmax(np.abs(beta[1:]))) if X.shape[1] > 1 else 0
        raise SeparationError(p_names[j])
    return PropensityFit(beta, fitted, it, converged)


@dataclass
class OutcomeFit:
    coef: np.ndarray
    fitted: np.ndarray


def fit_outcome_regression(covariates, dy, covariates_all=None):
    """Least squares of ``dy`` on an intercept plus covariates.

    ``covariates``/``dy`` are the estimation (control) sample; fitted values
    are returned for ``covariates_all`` when given, else for the same rows.
    """
    dy = np.asarray(dy, dtype=float).ravel()
    X = _with_intercept(covariates, dy.size)
    if dy.size < X.shape[1]:
        raise RankDeficientError(f"need at least {X.shape[1]} control units, got {dy.size}")
    _check_rank(X, "outcome regression")
    coef, *_ = np.linalg.lstsq(X, dy, rcond=None)
    Xa = X if covariates_all is None else _with_intercept(covariates_all, np.asarray(covariates_all).shape[0])
    return OutcomeFit(coef, Xa @ coef)


# ----------------------------------------------------------------------------
# 2x2 building blocks


def _unconditional_2x2(dy, D):
    """Difference of mean changes and its influence values on the subsample."""
    n_s = dy.size
    t = D == 1
    c = ~t
    at, ac = dy[t].mean(), dy[c].mean()
    psi = np.where(t, (dy - at) * (n_s / t.sum()), -(dy - ac) * (n_s / c.sum()))
    return at - ac, psi, ()


def _dr_2x2(dy, D, Xcov, names):
    """Doubly robust ATT with propensity and outcome-regression estimation effects.

    ATT = mean(w1 (dy - m)) / mean(w1) - mean(w0 (dy - m)) / mean(w0) with
    w1 = D and w0 = p (1 - D) / (1 - p).  The influence function adds the
    linearisations of the OLS fit (through m) and the logit fit (through p)
    to the plug-in terms.
    """
    n_s = dy.size
    Df = D.astype(float)
    X = _with_intercept(Xcov, n_s)
    ps = fit_propensity(Xcov, Df, names=names).fitted
    flags = ()
    if np.any(ps < OVERLAP_EPS) or np.any(ps > 1 - OVERLAP_EPS):
        flags = ("overlap",)
    ctrl = D == 0
    out = fit_outcome_regression(None if Xcov is None else Xcov[ctrl], dy[ctrl], Xcov if Xcov is not None else np.zeros((n_s, 0))).fitted
    resid = dy - out

    w_treat = Df
    w_cont = ps * (1 - Df) / (1 - ps)
    att_treat = w_treat * resid
    att_cont = w_cont * resid
    eta_treat = att_treat.mean() / w_treat.mean()
    eta_cont = att_cont.mean() / w_cont.mean()
    att = eta_treat - eta_cont

    w_ols = 1 - Df
    XpX_inv = np.linalg.inv((w_ols[:, None] * X).T @ X / n_s)
    lin_ols = (w_ols * resid)[:, None] * X @ XpX_inv
    W = ps * (1 - ps)
    hess_inv = np.linalg.inv(X.T @ (W[:, None] * X)) * n_s
    lin_ps = ((Df - ps)[:, None] * X) @ hess_inv

    M1 = (w_treat[:, None] * X).mean(axis=0)
    inf_treat = (att_treat - w_treat * eta_treat - lin_ols @ M1) / w_treat.mean()
    M2 = ((w_cont * (resid - eta_cont))[:, None] * X).mean(axis=0)
    M3 = (w_cont[:, None] * X).mean(axis=0)
    inf_cont = (att_cont - w_cont * eta_cont + lin_ps @ M2 - lin_ols @ M3) / w_cont.mean()
    return att, inf_treat - inf_cont, flags


# ----------------------------------------------------------------------------
# cells


@dataclass
class CellEstimate:
    g: int
    t: int
    base: int
    estimate: float
    se: float
    n_treated: int
    n_control: int
    identified: bool
    flags: tuple = ()
    influence: np.ndarray = field(default=None, repr=False)

    @property
    def event_time(self):
        return self.t - self.g

    def as_row(self):
        return {
            "g": self.g,
            "t": self.t,
            "e": self.event_time,
            "base": self.base,
            "estimate": None if not math.isfinite(self.estimate) else self.estimate,
            "se": None if not math.isfinite(self.se) else self.se,
            "n_treated": self.n_treated,
            "n_control": self.n_control,
            "identified": self.identified,
            "flags": list(self.flags),
        }


def base_period(g, t, design):
    """Reference period ``b`` for cell (g, t)."""
    long_base = g - design.anticipation - 1
    if design.base_period == "universal" or t >= g - design.anticipation:
        return long_base
    return t - 1


class _Prepared:
    """Panel arrays shared by all cells of one outcome."""

    def __init__(self, panel, outcome, design):
        self.Y = panel.outcome(outcome)
        self.months = panel.months
        self.m0 = int(panel.months[0])
        self.G = np.where(panel.first_treat > 0, panel.first_treat, np.inf).astype(float)
        self.n = panel.n_developers
        self.design = design
        self.cov = None
        if design.covariates:
            missing = [c for c in design.covariates if c not in panel.covariates]
            if missing:
                raise ValidationError(f"unknown covariate columns {missing}")
            self.cov = np.column_stack([panel.covariates[c] for c in design.covariates])

    def col(self, month):
        return int(month) - self.m0


def _cell(prep, g, t):
    d = prep.design
    b = base_period(g, t, d)
    n = prep.n
    zero = np.zeros(n)
    T = len(prep.months)

    def fail(flag, n_t=0, n_c=0):
        return CellEstimate(g, t, b, math.nan, math.nan, n_t, n_c, False, (flag,), zero)

    if not (0 <= prep.col(b) < T and 0 <= prep.col(t) < T):
        return fail("no-base")
    if b == t:
        return fail("base-equals-t")
    G = prep.G
    treated = G == g
    if d.control_group == "never-treated":
        control = np.isinf(G)
    else:
        control = (G > max(t, b) + d.anticipation) & ~treated
    n_t, n_c = int(treated.sum()), int(control.sum())
    if n_t == 0:
        return fail("no-treated", n_t, n_c)
    if n_c == 0:
        return fail("no-control", n_t, n_c)
    sub = treated | control
    dy = prep.Y[sub, prep.col(t)] - prep.Y[sub, prep.col(b)]
    D = treated[sub].astype(np.int8)
    try:
        if d.estimation == "unconditional":
            att, psi_s, flags = _unconditional_2x2(dy, D)
        else:
            Xcov = None if prep.cov is None else prep.cov[sub]
            att, psi_s, flags = _dr_2x2(dy, D, Xcov, list(d.covariates))
    except SeparationError as exc:
        return fail(f"separation:{exc.covariate}", n_t, n_c)
    except (RankDeficientError, np.linalg.LinAlgError):
        return fail("rank-deficient", n_t, n_c)
    psi = np.zeros(n)
    psi[sub] = psi_s * (n / sub.sum())
    se = math.sqrt(float(np.mean(psi**2)) / n)
    return CellEstimate(g, t, b, float(att), se, n_t, n_c, True, tuple(flags), psi)


def att_gt(panel, outcome, g, t, design=None):
    """Estimate a single ATT(g, t) and its influence column."""
    design = design or Design()
    prep = _Prepared(panel, outcome, design)
    cell = _cell(prep, int(g), int(t))
    if not cell.identified:
        warnings.warn(f"ATT({g},{t}) not identified: {', '.join(cell.flags)}", stacklevel=2)
    return cell


@dataclass
class AttGtResult:
    outcome: str
    design: Design
    cells: list
    influence: np.ndarray  # (n_developers, n_cells)
    developer_ids: np.ndarray
    cohort_sizes: dict

    @property
    def n(self):
        return self.influence.shape[0]

    def identified(self):
        return [c for c in self.cells if c.identified]

    def cell_index(self):
        return {(c.g, c.t): j for j, c in enumerate(self.cells)}

    def to_dict(self):
        return {
            "outcome": self.outcome,
            "design": self.design.echo(),
            "n_developers": int(self.n),
            "cohort_sizes": {str(g): int(c) for g, c in self.cohort_sizes.items()},
            "cells": [c.as_row() for c in self.cells],
        }

    def influence_frame(self):
        import pandas as pd

        cols = [f"g{c.g}_t{c.t}" for c in self.cells]
        df = pd.DataFrame(self.influence, columns=cols)
        df.insert(0, "developer_id", self.developer_ids)
        return df


def att_gt_all(panel, outcome, design=None):
    """Every (g, t) cell for the observed cohorts, ordered by (g, t).

    Cohorts are adoption months inside the window after its first month.
    For each cohort, cells run over every month that has a valid base
    period; cells with ``t < g`` are the placebo estimates.  Cells that
    cannot be estimated stay in the list with ``identified=False``.
    """
    design = design or Design()
    prep = _Prepared(panel, outcome, design)
    ft = panel.first_treat
    lo, hi = int(panel.months[0]), int(panel.months[-1])
    cohorts = sorted({int(g) for g in ft if lo < g <= hi})
    cells = []
    for g in cohorts:
        for t in panel.months[1:]:
            t = int(t)
            b = base_period(g, t, design)
            if b == t or not lo <= b <= hi:
                continue
            cells.append(_cell(prep, g, t))
    bad = [c for c in cells if not c.identified]
    if bad:
        warnings.warn(f"{len(bad)} of {len(cells)} cells not identified for {outcome}", stacklevel=2)
    infl = np.column_stack([c.influence for c in cells]) if cells else np.zeros((panel.n_developers, 0))
    for c in cells:
        c.influence = None
    sizes = {g: int(np.sum(ft == g)) for g in cohorts}
    return AttGtResult(outcome, design, cells, infl, panel.developer_ids, sizes)
