import math
import warnings

import numpy as np
import pytest
from scipy import stats

from conftest import make_panel, random_panel
from skillfrontier.aggregate import (
    BootstrapSettings,
    _multipliers,
    event_study,
    multiplier_bootstrap,
    pretrend_wald,
    simple_att,
)
from skillfrontier.did import Design, att_gt_all
from skillfrontier.errors import ValidationError

UNC = Design(estimation="unconditional")


def test_bootstrap_se_calibration():
    rng = np.random.default_rng(0)
    n = 10_000
    psi = rng.standard_normal(n)
    res = multiplier_bootstrap(psi, settings=BootstrapSettings(n_draws=2000, seed=1))
    assert res.se[0] == pytest.approx(1 / math.sqrt(n), rel=0.05)
    assert res.se_sd[0] == pytest.approx(1 / math.sqrt(n), rel=0.05)


def test_mammen_weights_moments():
    rng = np.random.default_rng(0)
    v = _multipliers(rng, "mammen", 400_000)
    assert v.mean() == pytest.approx(0, abs=0.01)
    assert v.var() == pytest.approx(1, abs=0.01)
    assert np.mean(v**3) == pytest.approx(1, abs=0.03)
    with pytest.raises(ValidationError):
        BootstrapSettings(weights="gaussian")


def test_bootstrap_deterministic_by_seed():
    psi = np.random.default_rng(0).normal(size=(500, 3))
    a = multiplier_bootstrap(psi, settings=BootstrapSettings(seed=5))
    b = multiplier_bootstrap(psi, settings=BootstrapSettings(seed=5))
    c = multiplier_bootstrap(psi, settings=BootstrapSettings(seed=6))
    np.testing.assert_array_equal(a.draws, b.draws)
    assert not np.array_equal(a.draws, c.draws)


@pytest.mark.parametrize("seed", range(20))
def test_uniform_band_contains_pointwise(seed):
    rng = np.random.default_rng(seed)
    psi = rng.normal(size=(300, 8)) @ rng.normal(size=(8, 8))
    res = multiplier_bootstrap(psi, settings=BootstrapSettings(n_draws=500, seed=seed))
    assert res.crit >= stats.norm.ppf(0.975)


def test_clustering_duplicated_rows_doubles_variance():
    rng = np.random.default_rng(3)
    psi = rng.normal(size=4000)
    dup = np.repeat(psi, 2)
    clusters = np.repeat(np.arange(4000), 2)
    s = BootstrapSettings(n_draws=4000, seed=2)
    iid = multiplier_bootstrap(dup, settings=s).se_sd[0]
    cl = multiplier_bootstrap(dup, clusters=clusters, settings=s).se_sd[0]
    assert (cl / iid) ** 2 == pytest.approx(2.0, rel=0.1)
    with pytest.raises(ValidationError):
        multiplier_bootstrap(dup, clusters=clusters[:-1])


def additive_panel(rng, tau, n=60, T=10):
    ft = rng.choice([0, 5, 6, 8], size=n)
    ft[:4] = [0, 5, 6, 8]
    months = np.arange(1, T + 1)
    post = (ft[:, None] > 0) & (months[None, :] >= ft[:, None])
    Y = rng.normal(size=(n, 1)) + rng.normal(size=(1, T)) + tau * post
    return make_panel(Y, ft)


def test_constant_effect_recovered_exactly():
    rng = np.random.default_rng(0)
    panel = additive_panel(rng, 2.5)
    res = att_gt_all(panel, "y", UNC)
    es = event_study(res, -3, 4)
    for e, a in zip(es.event_times, es.att):
        assert a == pytest.approx(2.5 if e >= 0 else 0.0, abs=1e-10)
    assert simple_att(res).estimate == pytest.approx(2.5, abs=1e-10)


def test_event_weights_proportional_to_cohort_size():
    rng = np.random.default_rng(1)
    panel = additive_panel(rng, 0.0)
    res = att_gt_all(panel, "y", UNC)
    es = event_study(res, -3, 3)
    for e, w in es.weights.items():
        assert sum(w.values()) == pytest.approx(1.0)
        tot = sum(res.cohort_sizes[g] for g in w)
        for g, x in w.items():
            assert x == pytest.approx(res.cohort_sizes[g] / tot)


def test_aggregation_is_linear():
    rng = np.random.default_rng(2)
    panel = random_panel(rng, n=40, T=7)
    a = att_gt_all(panel, "y", UNC)
    sa = simple_att(a)
    members = [c for c in a.cells if c.identified and c.t >= c.g]
    sizes = np.array([a.cohort_sizes[c.g] for c in members], float)
    assert sa.estimate == pytest.approx(np.dot(sizes / sizes.sum(), [c.estimate for c in members]), abs=1e-12)
    q = panel.copy()
    q.outcomes["y"] = 3 * panel.outcomes["y"]
    assert simple_att(att_gt_all(q, "y", UNC)).estimate == pytest.approx(3 * sa.estimate, abs=1e-10)


def test_omitted_event_times_and_errors():
    rng = np.random.default_rng(4)
    panel = additive_panel(rng, 1.0, T=10)
    res = att_gt_all(panel, "y", UNC)
    es = event_study(res, -10, 10)
    assert -10 in es.omitted and 10 in es.omitted
    assert es.at(0) is not None and es.at(-10) is None
    rows = es.to_rows()
    assert set(rows[0]) == {"e", "att", "se", "unif_lo", "unif_hi", "n_cohorts"}
    assert np.all(es.unif_lo <= es.att - 1.959 * es.se + 1e-12)
    pre_only = make_panel(rng.normal(size=(10, 4)), [0] * 9 + [6])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        r = att_gt_all(pre_only, "y", UNC)
    with pytest.raises(ValidationError):
        simple_att(r)


def test_wald_one_coefficient_reduces_to_squared_t():
    rng = np.random.default_rng(5)
    panel = additive_panel(rng, 0.0)
    panel.outcomes["y"] = panel.outcomes["y"] + rng.normal(scale=0.5, size=panel.outcomes["y"].shape)
    es = event_study(att_gt_all(panel, "y", UNC), -4, 3)
    j = es.at(-2)
    w = pretrend_wald(es, window=(-2, -2))
    assert w["df"] == 1
    assert w["statistic"] == pytest.approx((es.att[j] / es.se_sd[j]) ** 2, rel=1e-10)
    assert w["p_value"] == pytest.approx(stats.chi2.sf(w["statistic"], 1))
    full = es.pretrend
    assert full["event_times"] == [-4, -3, -2]


def test_wald_singular_covariance_uses_rank():
    rng = np.random.default_rng(6)
    panel = additive_panel(rng, 0.0)
    panel.outcomes["y"] = panel.outcomes["y"] + rng.normal(scale=0.5, size=panel.outcomes["y"].shape)
    es = event_study(att_gt_all(panel, "y", UNC), -4, 3)
    idx = [es.at(e) for e in (-4, -3)]
    es.draw_cov[np.ix_(idx, idx)] = np.array([[1.0, 1.0], [1.0, 1.0]]) * es.draw_cov[idx[0], idx[0]]
    w = pretrend_wald(es, window=(-4, -3))
    assert w["rank"] == 1 and w["df"] == 1
    assert math.isfinite(w["statistic"])


def test_simple_att_se_matches_cluster_resampling_bootstrap(sim_panel):
    d = UNC
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = att_gt_all(sim_panel, "n_languages", d)
        sa = simple_att(res, BootstrapSettings(n_draws=2000, seed=3))
        rng = np.random.default_rng(9)
        n = sim_panel.n_developers
        boot = []
        for _ in range(500):
            idx = rng.integers(0, n, n)
            p = make_panel(sim_panel.outcomes["n_languages"][idx], sim_panel.first_treat[idx], name="n_languages")
            boot.append(simple_att(att_gt_all(p, "n_languages", d), BootstrapSettings(n_draws=2)).estimate)
    assert sa.se == pytest.approx(np.std(boot, ddof=1), rel=0.10)


def _manual_attgt(cells, sizes, n=40, seed=0):
    """AttGtResult from explicit (g, t, estimate) triples with random influence."""
    from skillfrontier.did import AttGtResult, CellEstimate

    rng = np.random.default_rng(seed)
    objs = [CellEstimate(g, t, g - 2, est, 0.1, 5, 5, True) for g, t, est in cells]
    infl = rng.normal(size=(n, len(cells)))
    infl -= infl.mean(axis=0)
    return AttGtResult("y", Design(), objs, infl, np.arange(n), sizes)


def test_zero_influence_zero_se():
    res = multiplier_bootstrap(np.zeros((50, 3)))
    np.testing.assert_array_equal(res.se, 0)
    assert res.crit == pytest.approx(stats.norm.ppf(0.975))


def test_equal_cohorts_average():
    a = _manual_attgt([(5, 5, 1.0), (6, 6, 3.0)], {5: 10, 6: 10})
    es = event_study(a, 0, 0)
    assert es.att[0] == 2.0
    b = _manual_attgt([(5, 5, 2.0), (5, 6, 4.0)], {5: 10})
    assert simple_att(b).estimate == 3.0
    single = _manual_attgt([(5, 4, -0.5), (5, 5, 2.0), (5, 7, 1.25)], {5: 8})
    es = event_study(single, -1, 2)
    assert es.att.tolist() == [-0.5, 2.0, 1.25]
    assert es.omitted == [1]


def test_wald_all_zero():
    z = _manual_attgt([(8, t, 0.0) for t in range(2, 8)], {8: 10})
    w = event_study(z, -6, -1).pretrend
    assert w["statistic"] == 0.0 and w["p_value"] == 1.0


def test_bands_need_enough_draws():
    a = _manual_attgt([(5, 5, 1.0)], {5: 10})
    with pytest.raises(ValidationError):
        event_study(a, 0, 0, BootstrapSettings(n_draws=50))
