import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize, special

from conftest import make_panel, random_panel
from skillfrontier.did import Design, att_gt, att_gt_all, base_period, fit_outcome_regression, fit_propensity
from skillfrontier.errors import RankDeficientError, SeparationError, ValidationError

UNC = Design(estimation="unconditional")


def hand_2x2(Y, ft, g, t, delta=1, control="not-yet-treated"):
    """Plain-loop difference of mean changes."""
    b = g - delta - 1 if t >= g - delta else t - 1
    tr, co = [], []
    for i in range(Y.shape[0]):
        G = ft[i] if ft[i] > 0 else math.inf
        dy = Y[i, t - 1] - Y[i, b - 1]
        if G == g:
            tr.append(dy)
        elif (control == "never-treated" and G == math.inf) or (control == "not-yet-treated" and G > max(t, b) + delta):
            co.append(dy)
    return sum(tr) / len(tr) - sum(co) / len(co)


def test_base_period_rules():
    d = Design()
    assert base_period(5, 7, d) == 3
    assert base_period(5, 4, d) == 3
    assert base_period(5, 3, d) == 2
    assert base_period(5, 3, Design(base_period="universal")) == 3
    assert base_period(5, 5, Design(anticipation=0)) == 4


@pytest.mark.parametrize("seed", range(5))
def test_unconditional_matches_hand_computation(seed):
    rng = np.random.default_rng(seed)
    panel = random_panel(rng, n=10, T=6)
    res = att_gt_all(panel, "y", UNC)
    assert res.cells
    for c in res.identified():
        assert abs(c.estimate - hand_2x2(panel.outcomes["y"], panel.first_treat, c.g, c.t)) < 1e-12


def test_never_treated_control():
    rng = np.random.default_rng(3)
    panel = random_panel(rng, n=12, T=6)
    d = Design(estimation="unconditional", control_group="never-treated")
    for c in att_gt_all(panel, "y", d).identified():
        assert c.estimate == pytest.approx(hand_2x2(panel.outcomes["y"], panel.first_treat, c.g, c.t, control="never-treated"), abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_invariant_to_unit_and_time_effects(seed):
    rng = np.random.default_rng(seed)
    panel = random_panel(rng, n=10, T=6)
    shifted = panel.copy()
    shifted.outcomes["y"] = panel.outcomes["y"] + rng.normal(size=(10, 1)) * 5 + rng.normal(size=(1, 6)) * 3
    a = att_gt_all(panel, "y", UNC)
    b = att_gt_all(shifted, "y", UNC)
    for ca, cb in zip(a.cells, b.cells):
        if ca.identified:
            assert cb.estimate == pytest.approx(ca.estimate, abs=1e-9)


def test_dr_without_covariates_equals_unconditional():
    rng = np.random.default_rng(0)
    for _ in range(5):
        panel = random_panel(rng, n=40, T=6)
        a = att_gt_all(panel, "y", UNC)
        b = att_gt_all(panel, "y", Design())
        for ca, cb in zip(a.cells, b.cells):
            assert ca.identified == cb.identified
            if ca.identified:
                assert abs(ca.estimate - cb.estimate) < 1e-12
                assert abs(ca.se - cb.se) < 1e-12
        np.testing.assert_allclose(a.influence, b.influence, atol=1e-12)


def test_influence_has_mean_zero_and_matches_se():
    rng = np.random.default_rng(1)
    panel = random_panel(rng, n=50, T=6)
    res = att_gt_all(panel, "y", Design())
    for j, c in enumerate(res.cells):
        if c.identified:
            psi = res.influence[:, j]
            assert abs(psi.mean()) < 1e-12
            assert c.se == pytest.approx(math.sqrt(np.mean(psi**2) / res.n))


def two_period_covariate_panel(rng, n, outcome="linear", tau=1.0):
    x = rng.normal(size=n)
    p = special.expit(-0.3 + 0.8 * x)
    D = rng.random(n) < p
    trend = 1.0 + 2.0 * x if outcome == "linear" else 1.0 + 1.5 * x**2
    y0 = rng.normal(size=n) + x
    y1 = y0 + trend + tau * D + rng.normal(size=n)
    # month 1: base, month 2: D adopt at 3 with anticipation 1
    Y = np.column_stack([y0, y1])
    ft = np.where(D, 2, 0)
    panel = make_panel(Y, ft, covariates={"x": x})
    return panel


def test_double_robustness():
    rng = np.random.default_rng(7)
    d = Design(anticipation=0, covariates=("x",))
    unc = Design(anticipation=0, estimation="unconditional")
    # outcome model right, propensity also right
    p = two_period_covariate_panel(rng, 40000, "linear")
    assert att_gt(p, "y", 2, 2, d).estimate == pytest.approx(1.0, abs=0.05)
    assert abs(att_gt(p, "y", 2, 2, unc).estimate - 1.0) > 0.3
    # outcome model wrong (quadratic trend), propensity right
    p = two_period_covariate_panel(rng, 40000, "quadratic")
    assert att_gt(p, "y", 2, 2, d).estimate == pytest.approx(1.0, abs=0.06)


def test_dr_se_matches_nonparametric_bootstrap():
    rng = np.random.default_rng(11)
    n = 500
    p = two_period_covariate_panel(rng, n, "linear")
    d = Design(anticipation=0, covariates=("x",))
    cell = att_gt(p, "y", 2, 2, d)
    boot = []
    for _ in range(600):
        idx = rng.integers(0, n, n)
        q = make_panel(p.outcomes["y"][idx], p.first_treat[idx], covariates={"x": p.covariates["x"][idx]})
        boot.append(att_gt(q, "y", 2, 2, d).estimate)
    assert cell.se == pytest.approx(np.std(boot, ddof=1), rel=0.10)


def neg_loglik(beta, X, y):
    eta = X @ beta
    return np.sum(np.logaddexp(0, eta) - y * eta)


@pytest.mark.parametrize("seed", range(20))
def test_propensity_matches_direct_likelihood_maximization(seed):
    rng = np.random.default_rng(seed)
    n, k = 300, int(rng.integers(1, 4))
    X = rng.normal(size=(n, k))
    beta = rng.normal(scale=0.7, size=k + 1)
    y = (rng.random(n) < special.expit(beta[0] + X @ beta[1:])).astype(float)
    fit = fit_propensity(X, y)
    Xi = np.column_stack([np.ones(n), X])
    ref = optimize.minimize(
        neg_loglik, np.zeros(k + 1), args=(Xi, y), jac=lambda b, X, y: X.T @ (special.expit(X @ b) - y),
        method="BFGS", options={"gtol": 1e-11, "maxiter": 10000},
    )
    assert fit.converged
    np.testing.assert_allclose(fit.coef, ref.x, atol=1e-6)
    np.testing.assert_allclose(fit.fitted, special.expit(Xi @ ref.x), atol=1e-6)


def test_propensity_separation_and_rank():
    x = np.r_[np.linspace(-2, -0.1, 20), np.linspace(0.1, 2, 20)]
    y = (x > 0).astype(float)
    with pytest.raises(SeparationError) as exc:
        fit_propensity(x, y, names=["size"])
    assert exc.value.covariate == "size"
    with pytest.raises(SeparationError):
        fit_propensity(x, np.ones_like(x))
    X = np.column_stack([x, 2 * x])
    with pytest.raises(RankDeficientError):
        fit_propensity(X, (np.arange(40) % 2).astype(float))


@pytest.mark.parametrize("seed", range(10))
def test_ols_matches_normal_equations(seed):
    rng = np.random.default_rng(seed)
    n, k = 200, 3
    X = rng.normal(size=(n, k))
    y = X @ rng.normal(size=k) + 2 + rng.normal(size=n)
    fit = fit_outcome_regression(X, y)
    Xi = np.column_stack([np.ones(n), X])
    ref = np.linalg.solve(Xi.T @ Xi, Xi.T @ y)
    np.testing.assert_allclose(fit.coef, ref, atol=1e-8)
    Xa = rng.normal(size=(7, k))
    np.testing.assert_allclose(fit_outcome_regression(X, y, Xa).fitted, np.column_stack([np.ones(7), Xa]) @ ref, atol=1e-8)


def test_identification_flags():
    Y = np.arange(12, dtype=float).reshape(3, 4)
    # everyone treated at 3: no not-yet-treated control for t >= 3
    panel = make_panel(Y, [3, 3, 3])
    with pytest.warns(UserWarning, match="not identified"):
        c = att_gt(panel, "y", 3, 3, UNC)
    assert not c.identified and c.flags == ("no-control",)
    with pytest.warns(UserWarning):
        c = att_gt(panel, "y", 4, 4, UNC)
    assert c.flags == ("no-treated",)
    with pytest.warns(UserWarning):
        c = att_gt(panel, "y", 2, 3, UNC)
    assert c.flags == ("no-base",)


def test_separation_flag_in_cell():
    n = 40
    x = np.r_[np.zeros(20), np.ones(20)]
    ft = np.r_[np.zeros(20, int), np.full(20, 3)]
    panel = make_panel(np.random.default_rng(0).normal(size=(n, 4)), ft, covariates={"x": x})
    with pytest.warns(UserWarning):
        c = att_gt(panel, "y", 3, 3, Design(covariates=("x",)))
    assert c.flags == ("separation:x",)


def test_unknown_outcome_and_covariate():
    panel = random_panel(np.random.default_rng(0))
    with pytest.raises(ValidationError):
        att_gt_all(panel, "nope")
    with pytest.raises(ValidationError):
        att_gt_all(panel, "y", Design(covariates=("z",)))
    with pytest.raises(ValidationError):
        Design(control_group="everyone")


def test_placebo_cells_listed():
    panel = random_panel(np.random.default_rng(2), n=30, T=8, cohorts=[6])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = att_gt_all(panel, "y", UNC)
    ts = [c.t for c in res.cells]
    assert ts == list(range(2, 9))
    assert res.cells[0].base == 1
    assert res.to_dict()["cohort_sizes"] == {"6": int(np.sum(panel.first_treat == 6))}
    assert res.influence_frame().shape == (30, 8)


def test_hand_example_and_symmetry():
    panel = make_panel([[1, 1, 4], [2, 2, 2]], [3, 0])
    c = att_gt(panel, "y", 3, 3, Design(anticipation=0, estimation="unconditional"))
    assert c.estimate == 3.0
    same = make_panel(np.tile([1.0, 3.0, 2.0, 5.0], (6, 1)), [3, 3, 0, 0, 4, 0])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for cell in att_gt_all(same, "y", UNC).identified():
            assert cell.estimate == 0.0


def test_single_cohort_enumeration():
    panel = make_panel(np.random.default_rng(0).normal(size=(6, 4)), [3, 3, 3, 0, 0, 0])
    res = att_gt_all(panel, "y", Design(anticipation=0, estimation="unconditional"))
    assert [(c.g, c.t) for c in res.cells] == [(3, 2), (3, 3), (3, 4)]
    assert res.cells[0].base == 1 and res.cells[1].base == 2


def test_design_echo_defaults():
    assert Design().echo() == {
        "anticipation": 1,
        "control_group": "not-yet-treated",
        "base_period": "varying",
        "estimation": "doubly-robust",
        "covariates": [],
    }


def test_propensity_simple_cases():
    y = np.r_[np.ones(30), np.zeros(70)]
    fit = fit_propensity(None, y)
    np.testing.assert_allclose(fit.fitted, 0.3, atol=1e-12)
    x = np.tile([0.0, 1.0], 50)
    y = np.tile([1, 1, 0, 0], 25).astype(float)
    assert abs(fit_propensity(x, y).coef[1]) < 1e-10


def test_outcome_regression_simple_cases():
    rng = np.random.default_rng(0)
    dy = rng.normal(size=20)
    fit = fit_outcome_regression(None, dy)
    np.testing.assert_allclose(fit.fitted, dy.mean())
    x = rng.normal(size=20)
    fit = fit_outcome_regression(x, 3 - 2 * x)
    np.testing.assert_allclose(fit.fitted - (3 - 2 * x), 0, atol=1e-10)
    with pytest.raises(RankDeficientError):
        fit_outcome_regression(np.column_stack([x, x]), dy)


def test_dr_equals_residualized_unconditional_when_outcome_linear():
    rng = np.random.default_rng(3)
    n = 200
    x = rng.normal(size=n)
    D = rng.random(n) < special.expit(x)
    y0 = rng.normal(size=n)
    dy = 0.5 + 1.7 * x + D * rng.normal(1.0, 1.0, size=n)
    panel = make_panel(np.column_stack([y0, y0 + dy]), np.where(D, 2, 0), covariates={"x": x})
    dr = att_gt(panel, "y", 2, 2, Design(anticipation=0, covariates=("x",))).estimate
    m = fit_outcome_regression(x[~D], dy[~D], x).fitted
    r = dy - m
    assert dr == pytest.approx(r[D].mean() - r[~D].mean(), abs=1e-10)


def test_pre_cells_average_zero_under_parallel_trends():
    rng = np.random.default_rng(8)
    n, T = 3000, 10
    ft = rng.choice([0, 6, 7, 8], size=n)
    Y = rng.normal(size=(n, 1)) + np.linspace(0, 3, T)[None, :] + rng.normal(size=(n, T))
    res = att_gt_all(make_panel(Y, ft), "y", UNC)
    pre = [c for c in res.identified() if c.t < c.g - 1]
    z = np.array([c.estimate / c.se for c in pre])
    assert abs(z.mean()) < 3 / math.sqrt(len(z)) + 0.5
    assert np.mean(np.abs(z) > 1.96) < 0.2


def test_unconditional_se_matches_two_sample_formula():
    rng = np.random.default_rng(4)
    panel = random_panel(rng, n=30, T=6)
    Y, ft = panel.outcomes["y"], panel.first_treat
    for c in att_gt_all(panel, "y", UNC).identified():
        dy = Y[:, c.t - 1] - Y[:, c.base - 1]
        G = np.where(ft > 0, ft, np.inf)
        tr = G == c.g
        co = (G > max(c.t, c.base) + 1) & ~tr
        expect = math.sqrt(dy[tr].var() / tr.sum() + dy[co].var() / co.sum())
        assert c.se == pytest.approx(expect, abs=1e-10)
