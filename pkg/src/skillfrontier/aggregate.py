"""Event-study and overall aggregation of ATT(g, t) with multiplier-bootstrap inference."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import ValidationError

IQR_TO_SD = float(stats.norm.ppf(0.75) - stats.norm.ppf(0.25))  # 1.349
Z_975 = float(stats.norm.ppf(0.975))
PRETREND_WINDOW = (-6, -2)
_CHUNK = 250
MIN_BAND_DRAWS = 100


@dataclass(frozen=True)
class BootstrapSettings:
    n_draws: int = 1000
    weights: str = "rademacher"
    seed: int = 0
    level: float = 0.95

    def __post_init__(self):
        if not isinstance(self.n_draws, (int, np.integer)) or self.n_draws < 1:
            raise ValidationError("n_draws must be a positive integer")
        if self.weights not in ("rademacher", "mammen"):
            raise ValidationError(f"unknown multiplier law {self.weights!r}")


@dataclass
class BootstrapResult:
    se: np.ndarray  # IQR-based
    se_sd: np.ndarray  # standard deviation of draws
    crit: float  # uniform critical value
    draws: np.ndarray = field(repr=False)  # (B, m)


def _multipliers(rng, law, shape):
    if law == "rademacher":
        return rng.integers(0, 2, size=shape).astype(np.float64) * 2.0 - 1.0
    s5 = math.sqrt(5.0)
    lo, hi = (1 - s5) / 2, (1 + s5) / 2
    p_lo = (s5 + 1) / (2 * s5)
    return np.where(rng.random(shape) < p_lo, lo, hi)


def multiplier_bootstrap(influence, clusters=None, settings=None):
    """Clustered multiplier bootstrap of the means of influence columns.

    Each draw multiplies every cluster's summed influence by one
    mean-zero, unit-variance weight; the draw for column ``j`` is
    ``sum_c v_c S_cj / n``.  Standard errors are IQR/1.349 of the draws
    (``se_sd`` keeps the plain standard deviation).  The uniform critical
    value is the ``level`` quantile of ``max_j |draw_j| / se_j`` over
    columns with positive SE, floored at the pointwise normal value so the
    uniform band always contains the pointwise band.
    """
    settings = settings or BootstrapSettings()
    psi = np.asarray(influence, dtype=float)
    if psi.ndim == 1:
        psi = psi[:, None]
    n, m = psi.shape
    if clusters is None:
        S = psi
    else:
        clusters = np.asarray(clusters)
        if clusters.shape[0] != n:
            raise ValidationError("clusters must label every influence row")
        codes, inv = np.unique(clusters, return_inverse=True)
        S = np.zeros((len(codes), m))
        np.add.at(S, inv.ravel(), psi)
    rng = np.random.Generator(np.random.Philox(key=np.array([settings.seed & ((1 << 64) - 1), 0xB007], dtype=np.uint64)))
    B = settings.n_draws
    draws = np.empty((B, m))
    for start in range(0, B, _CHUNK):
        stop = min(B, start + _CHUNK)
        V = _multipliers(rng, settings.weights, (stop - start, S.shape[0]))
        draws[start:stop] = V @ S / n
    q75, q25 = np.percentile(draws, [75, 25], axis=0)
    se = (q75 - q25) / IQR_TO_SD
    se_sd = draws.std(axis=0, ddof=1) if B > 1 else np.zeros(m)
    pointwise = float(stats.norm.ppf(0.5 + settings.level / 2))
    ok = se > 0
    if ok.any():
        tmax = np.max(np.abs(draws[:, ok]) / se[ok], axis=1)
        crit = max(float(np.quantile(tmax, settings.level)), pointwise)
    else:
        crit = pointwise
    se = np.where(ok, se, 0.0)
    return BootstrapResult(se, se_sd, crit, draws)


# ----------------------------------------------------------------------------


@dataclass
class EventStudyResult:
    outcome: str
    event_times: np.ndarray
    att: np.ndarray
    se: np.ndarray
    se_sd: np.ndarray
    crit: float
    n_cohorts: np.ndarray
    weights: dict  # e -> {g: weight}
    influence: np.ndarray = field(repr=False)
    omitted: list = field(default_factory=list)
    draw_cov: np.ndarray = field(default=None, repr=False)
    pretrend: dict | None = None

    @property
    def unif_lo(self):
        return self.att - self.crit * self.se

    @property
    def unif_hi(self):
        return self.att + self.crit * self.se

    def at(self, e):
        idx = np.flatnonzero(self.event_times == e)
        return int(idx[0]) if idx.size else None

    def to_rows(self):
        return [
            {
                "e": int(e),
                "att": float(a),
                "se": float(s),
                "unif_lo": float(lo),
                "unif_hi": float(hi),
                "n_cohorts": int(k),
            }
            for e, a, s, lo, hi, k in zip(self.event_times, self.att, self.se, self.unif_lo, self.unif_hi, self.n_cohorts)
        ]


@dataclass
class SimpleAtt:
    estimate: float
    se: float
    se_sd: float
    influence: np.ndarray = field(repr=False)
    weights: dict = field(default_factory=dict)


def _combine(attgt, members):
    """Cohort-size weighted combination of the given cell indices."""
    sizes = np.array([attgt.cohort_sizes[attgt.cells[j].g] for j in members], dtype=float)
    w = sizes / sizes.sum()
    est = float(np.dot(w, [attgt.cells[j].estimate for j in members]))
    psi = attgt.influence[:, members] @ w
    return est, psi, w


def event_weights(attgt, e_min=-6, e_max=10):
    """Per event time: list of (cell index, weight) over identified cells."""
    out = {}
    for e in range(e_min, e_max + 1):
        members = [j for j, c in enumerate(attgt.cells) if c.identified and c.t - c.g == e]
        if members:
            _, _, w = _combine(attgt, members)
            out[e] = list(zip(members, w))
    return out


def simple_att(attgt, settings=None, clusters=None):
    """Cohort-size weighted mean of the identified post-treatment cells (t >= g)."""
    members = [j for j, c in enumerate(attgt.cells) if c.identified and c.t >= c.g]
    if not members:
        raise ValidationError("no identified post-treatment cells")
    est, psi, w = _combine(attgt, members)
    boot = multiplier_bootstrap(psi[:, None], clusters, settings)
    weights = {f"{attgt.cells[j].g},{attgt.cells[j].t}": float(x) for j, x in zip(members, w)}
    return SimpleAtt(est, float(boot.se[0]), float(boot.se_sd[0]), psi, weights)


def event_study(attgt, e_min=-6, e_max=10, settings=None, clusters=None):
    """Aggregate cells by event time ``e = t - g`` with cohort-size weights.

    Event times without an identified cell are listed in ``omitted``.  The
    bootstrap runs jointly over all event times; the pre-trend Wald test over
    ``e`` in -6..-2 is attached as ``pretrend``.
    """
    settings = settings or BootstrapSettings()
    if settings.n_draws < MIN_BAND_DRAWS:
        raise ValidationError(f"uniform bands need at least {MIN_BAND_DRAWS} bootstrap draws")
    ew = event_weights(attgt, e_min, e_max)
    omitted = [e for e in range(e_min, e_max + 1) if e not in ew]
    if not ew:
        raise ValidationError(f"no identified cells for event times {e_min}..{e_max}")
    es_list = sorted(ew)
    att, cols, ncoh, wmap = [], [], [], {}
    for e in es_list:
        members = [j for j, _ in ew[e]]
        est, psi, w = _combine(attgt, members)
        att.append(est)
        cols.append(psi)
        ncoh.append(len(members))
        wmap[e] = {attgt.cells[j].g: float(x) for j, x in zip(members, w)}
    infl = np.column_stack(cols)
    boot = multiplier_bootstrap(infl, clusters, settings)
    res = EventStudyResult(
        outcome=attgt.outcome,
        event_times=np.asarray(es_list),
        att=np.asarray(att),
        se=boot.se,
        se_sd=boot.se_sd,
        crit=boot.crit,
        n_cohorts=np.asarray(ncoh),
        weights=wmap,
        influence=infl,
        omitted=omitted,
        draw_cov=np.atleast_2d(np.cov(boot.draws, rowvar=False)) if boot.draws.shape[0] > 1 else None,
    )
    try:
        res.pretrend = pretrend_wald(res)
    except ValidationError:
        res.pretrend = None
    return res


def pretrend_wald(es, window=PRETREND_WINDOW):
    """Wald test that the pre-period event-study coefficients are jointly zero.

    Uses the covariance of the bootstrap draws; a singular covariance is
    handled with a pseudo-inverse and the chi-square degrees of freedom set
    to its rank.
    """
    lo, hi = window
    idx = np.flatnonzero((es.event_times >= lo) & (es.event_times <= hi))
    if idx.size == 0 or es.draw_cov is None:
        raise ValidationError("no pre-period estimates with a bootstrap covariance")
    theta = es.att[idx]
    V = es.draw_cov[np.ix_(idx, idx)]
    n_coef = int(idx.size)
    if np.all(theta == 0):
        return {"statistic": 0.0, "p_value": 1.0, "df": n_coef, "rank": int(np.linalg.matrix_rank(V)), "event_times": es.event_times[idx].tolist()}
    rank = int(np.linalg.matrix_rank(V))
    if rank == 0:
        return {"statistic": math.inf, "p_value": 0.0, "df": 0, "rank": 0, "event_times": es.event_times[idx].tolist()}
    Vinv = np.linalg.inv(V) if rank == n_coef else np.linalg.pinv(V)
    stat = float(theta @ Vinv @ theta)
    df = rank
    return {
        "statistic": stat,
        "p_value": float(stats.chi2.sf(stat, df)),
        "df": df,
        "rank": rank,
        "event_times": es.event_times[idx].tolist(),
    }
