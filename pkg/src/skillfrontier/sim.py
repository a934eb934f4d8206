"""Population simulator with staggered AI adoption.

Every developer gets an independent Philox substream keyed by
``(seed, developer index)``.  All innovations for the whole horizon are drawn
up front, whether or not they end up being used, so an AI-on and an AI-off
run built from the same draws share common random numbers.
"""

from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from ._backend import get_kernels
from ._kernels_py import StepConstants
from .errors import ConfigError, ValidationError
from .model import ModelParams
from .panel import OUTCOMES, OPTIONAL_OUTCOMES, CommitTable, build_outcomes

NEVER = 0
_U64 = (1 << 64) - 1


@dataclass(frozen=True)
class SimPanelConfig:
    """Population, calendar and adoption design of one simulated panel.

    ``adoption_schedule`` maps cohort month to developer count; when it is
    ``None`` the default schedule spreads 80% of developers evenly over
    months ``round(0.6 T) .. round(0.9 T)`` and leaves the rest never treated.
    ``never_treated`` defaults to whatever the schedule leaves over.
    """

    model: ModelParams = field(default_factory=ModelParams)
    n_developers: int = 1000
    n_periods: int = 28
    adoption_schedule: dict | None = None
    never_treated: int | None = None
    specialist_share: float = 0.5
    seed: int = 0
    injected_effect: float = 0.0
    injected_outcome: str = "n_languages"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not isinstance(self.n_developers, (int, np.integer)) or self.n_developers < 1:
            raise ConfigError("n_developers", f"must be a positive integer, got {self.n_developers!r}")
        if not isinstance(self.n_periods, (int, np.integer)) or self.n_periods < 1:
            raise ConfigError("n_periods", f"must be a positive integer, got {self.n_periods!r}")
        if not 0 <= self.specialist_share <= 1:
            raise ConfigError("specialist_share", "must lie in [0, 1]")
        if not isinstance(self.seed, (int, np.integer)) or not 0 <= self.seed <= _U64:
            raise ConfigError("seed", "must be an unsigned 64-bit integer")
        if not math.isfinite(self.injected_effect):
            raise ConfigError("injected_effect", "must be finite")
        if self.injected_outcome not in OUTCOMES + OPTIONAL_OUTCOMES:
            raise ConfigError("injected_outcome", f"unknown outcome {self.injected_outcome!r}")
        sched = self.resolved_schedule()
        for g, cnt in sched.items():
            if g != NEVER and not 2 <= g <= self.n_periods:
                raise ConfigError("adoption_schedule", f"cohort month {g} outside 2..{self.n_periods}")
            if cnt < 0:
                raise ConfigError("adoption_schedule", f"negative count for cohort {g}")
        if sum(sched.values()) != self.n_developers:
            raise ConfigError(
                "adoption_schedule",
                f"cohort counts sum to {sum(sched.values())}, expected n_developers={self.n_developers}",
            )

    def resolved_schedule(self):
        """Cohort month -> count, with key 0 for never treated."""
        n, T = self.n_developers, self.n_periods
        if self.adoption_schedule is None:
            lo = max(2, round(0.6 * T))
            hi = min(T, max(lo, round(0.9 * T)))
            never = self.never_treated if self.never_treated is not None else round(0.2 * n)
            treated = max(0, n - never)
            if T < 2:
                return {NEVER: n}
            cohorts = list(range(lo, hi + 1))
            base, extra = divmod(treated, len(cohorts))
            sched = {g: base + (1 if j < extra else 0) for j, g in enumerate(cohorts)}
            sched[NEVER] = never
            return {g: c for g, c in sched.items() if c > 0 or g == NEVER}
        sched = {int(g): int(c) for g, c in self.adoption_schedule.items()}
        if self.never_treated is not None:
            sched[NEVER] = sched.get(NEVER, 0) + int(self.never_treated)
        else:
            sched.setdefault(NEVER, 0)
            sched[NEVER] += n - sum(sched.values())
        return sched

    def with_seed(self, seed):
        return replace(self, seed=int(seed))


# ----------------------------------------------------------------------------
# configuration files

_SIM_FIELDS = [f.name for f in dataclasses.fields(SimPanelConfig) if f.name != "model"]


def _coerce(value, default, name):
    text = value.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in {"1", "true", "yes", "on"}:
                return True
            if low in {"0", "false", "no", "off"}:
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(name, f"cannot parse {text!r}") from None
    return text


def parse_config_text(text):
    """Parse ``key = value`` lines into a :class:`SimPanelConfig`.

    Model parameters may be written bare (``risk_aversion = 2``) or with a
    ``model.`` prefix.  ``adoption_schedule`` is a comma list of
    ``month:count`` pairs.  ``#`` starts a comment.
    """
    model_defaults = ModelParams()
    sim_defaults = {f.name: f.default for f in dataclasses.fields(SimPanelConfig) if f.name != "model"}
    model_kw, sim_kw = {}, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.removeprefix("model.")
        if key in ModelParams.field_names():
            model_kw[key] = _coerce(value, getattr(model_defaults, key), key)
        elif key == "adoption_schedule":
            sched = {}
            for part in filter(None, (p.strip() for p in value.split(","))):
                try:
                    g, c = part.split(":")
                    sched[int(g)] = int(c)
                except ValueError:
                    raise ConfigError(key, f"bad cohort entry {part!r}") from None
            sim_kw[key] = sched
        elif key == "never_treated":
            sim_kw[key] = _coerce(value, 0, key)
        elif key in sim_defaults:
            sim_kw[key] = _coerce(value, sim_defaults[key], key)
        else:
            raise ConfigError(key, "unknown configuration key")
    model = ModelParams(**model_kw)
    return SimPanelConfig(model=model, **sim_kw)


def read_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def format_config(config):
    """Render a config back to the text format; round-trips through :func:`parse_config_text`."""
    lines = ["# simulation"]
    for name in _SIM_FIELDS:
        value = getattr(config, name)
        if name == "adoption_schedule":
            sched = config.resolved_schedule()
            value = ", ".join(f"{g}:{c}" for g, c in sorted(sched.items()) if g != NEVER)
            lines.append(f"adoption_schedule = {value}")
            lines.append(f"never_treated = {sched.get(NEVER, 0)}")
            continue
        if name == "never_treated":
            continue
        lines.append(f"{name} = {value!r}" if isinstance(value, float) else f"{name} = {value}")
    lines.append("# model")
    for name in ModelParams.field_names():
        value = getattr(config.model, name)
        lines.append(f"{name} = {value!r}" if isinstance(value, float) else f"{name} = {value}")
    return "\n".join(lines) + "\n"


# ----------------------------------------------------------------------------
# random draws


def _developer_rng(seed, index):
    return np.random.Generator(np.random.Philox(key=np.array([seed & _U64, index], dtype=np.uint64)))


@dataclass
class Draws:
    """All random inputs for one population, indexed by developer."""

    first_treat: np.ndarray
    specialist: np.ndarray
    known_L: np.ndarray
    known_S: np.ndarray
    mu_L0: np.ndarray
    mu_S0: np.ndarray
    th_L: np.ndarray
    th_S: np.ndarray
    pi_L0: np.ndarray
    pi_S0: np.ndarray
    eps_L: np.ndarray
    z_L: np.ndarray
    eps_S: np.ndarray
    z_S: np.ndarray
    commits: np.ndarray


def assign_cohorts(config):
    """First-treatment month per developer (0 = never), a seeded shuffle of the schedule."""
    sched = config.resolved_schedule()
    labels = np.concatenate([np.full(c, g, dtype=np.int64) for g, c in sorted(sched.items())])
    rng = _developer_rng(config.seed, _U64)
    return labels[rng.permutation(len(labels))]


def draw_population(config):
    p = config.model
    n, T, K, S = config.n_developers, config.n_periods, p.n_languages, p.n_sectors
    d = Draws(
        first_treat=assign_cohorts(config),
        specialist=np.zeros(n, dtype=bool),
        known_L=np.zeros((n, K), dtype=bool),
        known_S=np.zeros((n, S), dtype=bool),
        mu_L0=np.empty((n, K)),
        mu_S0=np.empty((n, S)),
        th_L=np.empty((n, K)),
        th_S=np.empty((n, S)),
        pi_L0=np.empty((n, K)),
        pi_S0=np.empty((n, S)),
        eps_L=np.empty((n, T, K)),
        z_L=np.empty((n, T, K)),
        eps_S=np.empty((n, T, S)),
        z_S=np.empty((n, T, S)),
        commits=np.empty((n, T, K, S), dtype=np.int64),
    )
    hi_gen = max(3, min(p.max_known_languages, K))
    lam = p.commit_rate - 1.0
    for i in range(n):
        rng = _developer_rng(config.seed, i)
        spec = rng.random() < config.specialist_share
        size = int(rng.integers(1, 3)) if spec else int(rng.integers(3, hi_gen + 1))
        size = min(size, K)
        d.specialist[i] = size <= 2
        d.known_L[i, rng.permutation(K)[:size]] = True
        d.known_S[i, rng.permutation(S)[: p.n_known_sectors]] = True
        d.mu_L0[i] = p.mean_prior_loc + p.mean_prior_scale * rng.standard_normal(K)
        d.mu_S0[i] = p.mean_prior_loc + p.mean_prior_scale * rng.standard_normal(S)
        d.th_L[i] = rng.standard_normal(K)
        d.th_S[i] = rng.standard_normal(S)
        d.eps_L[i] = rng.standard_normal((T, K))
        d.z_L[i] = rng.standard_normal((T, K))
        d.eps_S[i] = rng.standard_normal((T, S))
        d.z_S[i] = rng.standard_normal((T, S))
        d.commits[i] = 1 + rng.poisson(lam, (T, K, S))
    d.pi_L0 = np.where(d.known_L, p.prior_precision_known, p.prior_precision_unknown)
    d.pi_S0 = np.where(d.known_S, p.prior_precision_known, p.prior_precision_unknown)
    # truths drawn from the prior: theta = mu0 + z / sqrt(pi0)
    d.th_L = d.mu_L0 + d.th_L / np.sqrt(d.pi_L0)
    d.th_S = d.mu_S0 + d.th_S / np.sqrt(d.pi_S0)
    return d


@dataclass
class SimRun:
    """Trajectories of one simulated population."""

    first_treat: np.ndarray
    specialist: np.ndarray
    portfolio: np.ndarray  # (n, T, K) uint8
    repos: np.ndarray  # (n, T, K, S) uint8
    lang_precision: np.ndarray  # (n, T, K)
    known_L: np.ndarray

    @property
    def n_languages(self):
        return self.portfolio.sum(axis=2)

    @property
    def n_repos(self):
        return self.repos.sum(axis=(2, 3))

    @property
    def n_sectors(self):
        return self.repos.any(axis=2).sum(axis=2)

    @property
    def cumulative_languages(self):
        ever = np.logical_or.accumulate(self.portfolio.astype(bool), axis=1) | self.initial_portfolio[:, None, :]
        return ever.sum(axis=2)


def run_population(draws, params, backend=None):
    """Run the learning dynamics on pre-drawn inputs."""
    kern = get_kernels(backend)
    c = StepConstants.from_params(params)
    mu_L = draws.mu_L0.copy()
    pi_L = draws.pi_L0.copy()
    mu_S = draws.mu_S0.copy()
    pi_S = draws.pi_S0.copy()
    # incumbents: known languages clearing the threshold, no entry cost
    port0 = draws.known_L & (mu_L - c.half_rho / pi_L > c.threshold)
    port = port0.copy()
    ai_start = np.where(draws.first_treat > 0, draws.first_treat, np.iinfo(np.int64).max).astype(np.int64)
    ph, rh, prec = kern.simulate_block(
        mu_L, pi_L, draws.th_L, mu_S, pi_S, draws.th_S, port, ai_start,
        draws.eps_L, draws.z_L, draws.eps_S, draws.z_S, c,
    )
    run = SimRun(draws.first_treat, draws.specialist, ph, rh, prec, draws.known_L)
    run.initial_portfolio = port0
    return run


def records_from_run(run, draws, config):
    p = config.model
    K, S = p.n_languages, p.n_sectors
    i, t, k, s = np.nonzero(run.repos)
    return CommitTable(
        developer_id=(i + 1).astype(np.int64),
        month=(t + 1).astype(np.int64),
        repo_id=(i * K * S + k * S + s + 1).astype(np.int64),
        language_id=(k + 1).astype(np.int64),
        sector_id=(s + 1).astype(np.int64),
        n_commits=draws.commits[i, t, k, s],
    )


def simulate_panel(config, backend=None, return_run=False):
    """Simulate commit records and the adoption map for ``config``.

    Returns ``(records, adoption)`` where ``records`` is a
    :class:`~skillfrontier.panel.CommitTable` sorted by (developer, month,
    language, sector) and ``adoption`` maps developer id (1-based) to first
    treated month, 0 for never.
    """
    config.validate()
    draws = draw_population(config)
    run = run_population(draws, config.model, backend=backend)
    records = records_from_run(run, draws, config)
    adoption = {i + 1: int(g) for i, g in enumerate(draws.first_treat)}
    if return_run:
        return records, adoption, run
    return records, adoption


def simulate_outcome_panel(config, backend=None):
    """Simulate, build the outcome panel and apply the configured injected effect."""
    records, adoption = simulate_panel(config, backend=backend)
    panel = build_outcomes(records, adoption, window=(1, config.n_periods), backend=backend)
    if config.injected_effect:
        panel = inject_effect(panel, config.injected_effect, config.injected_outcome)
    return panel


def inject_effect(panel, tau, outcome, adoption=None):
    """Add ``tau`` to ``outcome`` on treated developer-months at or after adoption.

    ``adoption`` optionally overrides the panel's own first-treatment column.
    """
    if not math.isfinite(tau):
        raise ValidationError(f"tau must be finite, got {tau!r}")
    if outcome not in panel.outcomes:
        raise ValidationError(f"unknown outcome {outcome!r}")
    out = panel.copy()
    if adoption is not None:
        out.first_treat = np.asarray([int(adoption[d]) for d in out.developer_ids], dtype=np.int64)
    if tau == 0:
        return out
    out.outcomes[outcome] = out.outcomes[outcome] + tau * out.post_mask()
    return out


# ----------------------------------------------------------------------------
# proposition checks

PROPOSITIONS = ("P1", "P2", "P3", "P4", "P5")
_LABELS = {
    "P1": "languages per month higher with AI",
    "P2": "sectors per month higher with AI",
    "P3": "repositories per month higher with AI",
    "P4": "language effect larger for specialists",
    "P5": "cumulative-language effect grows with event time",
}
_ALPHA = {"P1": 0.01, "P2": 0.01, "P3": 0.01, "P4": 0.05}
P5_MIN_RANK_CORR = 0.9
P5_EVENT_TIMES = range(0, 11)


@dataclass
class PropositionResult:
    name: str
    label: str
    status: str  # pass, fail, inconclusive
    mean_diff: float
    mc_se: float
    p_value: float | None = None
    rank_corr: float | None = None
    profile: list | None = None
    note: str = ""

    @property
    def passed(self):
        return self.status == "pass"


@dataclass
class PropositionReport:
    n_reps: int
    seed: int
    results: dict

    @property
    def all_passed(self):
        return all(r.passed for r in self.results.values())

    @property
    def any_inconclusive(self):
        return any(r.status == "inconclusive" for r in self.results.values())

    def to_dict(self):
        return {
            "n_reps": self.n_reps,
            "seed": self.seed,
            "propositions": {k: dataclasses.asdict(v) for k, v in self.results.items()},
        }

    def to_text(self):
        lines = [f"{'':<4}{'proposition':<50}{'diff':>10}{'MC se':>10}{'p / rho':>10}  status"]
        for k, r in self.results.items():
            stat = r.rank_corr if k == "P5" else r.p_value
            stat_s = "" if stat is None or not math.isfinite(stat) else f"{stat:.4f}"
            lines.append(f"{k:<4}{r.label:<50}{r.mean_diff:>10.4f}{r.mc_se:>10.4f}{stat_s:>10}  {r.status}")
        return "\n".join(lines)


def _rep_seed(seed, rep):
    return int(np.random.SeedSequence([seed & _U64, rep]).generate_state(1, np.uint64)[0])


def _paired_effects(config, backend=None):
    draws = draw_population(config)
    on = run_population(draws, config.model, backend=backend)
    off = run_population(draws, config.model.without_ai(), backend=backend)
    G = draws.first_treat
    T = config.n_periods
    months = np.arange(1, T + 1)
    post = (G[:, None] > 0) & (months[None, :] >= G[:, None])
    out = {}
    for key, attr in (("P1", "n_languages"), ("P2", "n_sectors"), ("P3", "n_repos")):
        diff = getattr(on, attr).astype(float) - getattr(off, attr)
        out[key] = diff[post].mean() if post.any() else np.nan
    dN = on.n_languages.astype(float) - off.n_languages
    spec = draws.specialist[:, None] & post
    gen = (~draws.specialist)[:, None] & post
    out["P4"] = dN[spec].mean() - dN[gen].mean() if spec.any() and gen.any() else np.nan
    dC = on.cumulative_languages.astype(float) - off.cumulative_languages
    prof = []
    for e in P5_EVENT_TIMES:
        sel = (G > 0) & (G + e <= T)
        prof.append(dC[sel, G[sel] + e - 1].mean() if sel.any() else np.nan)
    out["P5"] = np.array(prof)
    return out


def check_propositions(config, n_reps, backend=None):
    """Paired AI-on / AI-off Monte Carlo check of the five model predictions.

    Each replication draws one population and runs it twice, with and
    without the AI channel, on common random numbers.  Effects are averaged
    over treated developer-months at or after adoption.  P1 to P3 pass at
    one-sided p < 0.01, P4 at p < 0.05, P5 when the Spearman correlation of
    the cumulative-language effect with event time 0..10 is at least 0.9.
    """
    if not isinstance(n_reps, (int, np.integer)) or n_reps < 2:
        raise ConfigError("n_reps", "must be an integer >= 2")
    per = {k: [] for k in PROPOSITIONS}
    for r in range(n_reps):
        eff = _paired_effects(config.with_seed(_rep_seed(config.seed, r)), backend=backend)
        for k in PROPOSITIONS:
            per[k].append(eff[k])
    K = config.model.n_languages
    results = {}
    for k in ("P1", "P2", "P3", "P4"):
        x = np.asarray(per[k], dtype=float)
        x = x[np.isfinite(x)]
        mean = float(x.mean()) if x.size else float("nan")
        se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else float("nan")
        res = PropositionResult(k, _LABELS[k], "inconclusive", mean, se)
        if k in ("P1", "P4") and K == 1:
            res.note = "a single language admits no diversification"
        elif x.size < 2 or not se > 0:
            res.note = "no Monte Carlo variation between arms"
        else:
            res.p_value = float(stats.norm.sf(mean / se))
            res.status = "pass" if res.p_value < _ALPHA[k] else "fail"
        results[k] = res
    prof = np.asarray(per["P5"], dtype=float)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN event times
        mean_prof = np.nanmean(prof, axis=0)
    ok = np.isfinite(mean_prof)
    res = PropositionResult(
        "P5",
        _LABELS["P5"],
        "inconclusive",
        float(np.nanmean(mean_prof)) if ok.any() else float("nan"),
        float(np.nanstd(prof[:, ok].mean(axis=1), ddof=1) / math.sqrt(n_reps)) if ok.any() else float("nan"),
        profile=[None if not math.isfinite(v) else float(v) for v in mean_prof],
    )
    if K == 1:
        res.note = "a single language admits no diversification"
    elif ok.sum() < 3 or np.ptp(mean_prof[ok]) == 0:
        res.note = "event-time profile is flat or too short"
    else:
        rho = stats.spearmanr(np.asarray(P5_EVENT_TIMES)[ok], mean_prof[ok]).statistic
        res.rank_corr = float(rho)
        res.status = "pass" if rho >= P5_MIN_RANK_CORR else "fail"
    results["P5"] = res
    return PropositionReport(n_reps, config.seed, results)
