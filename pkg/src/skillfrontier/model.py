"""Bayesian learning-by-doing primitives for language and sector choice.

Beliefs about a developer's latent productivity in each language (and each
industry sector) are Normal; a belief is summarised by its mean and its
precision (inverse variance).  Using a language yields one signal with noise
variance ``signal_noise_var``; an AI assistant yields ``ai_signal_count``
extra signals of variance ``ai_signal_var`` about *every* language and sector,
used or not.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace

import numpy as np

from .errors import ConfigError, DomainError

PRECISION_FLOOR = 1e-12


def _positive(name, value):
    if not value > 0:
        raise DomainError(f"{name} must be > 0, got {value!r}")


def update_precision(precision, signal_noise_var, used, ai_signal_count=0.0, ai_signal_var=1.0):
    """Posterior precision after one period.

    Usage adds ``1/signal_noise_var``; the AI channel adds
    ``ai_signal_count/ai_signal_var`` whether or not the language was used.
    """
    _positive("signal_noise_var", signal_noise_var)
    _positive("ai_signal_var", ai_signal_var)
    _positive("precision", precision)
    if ai_signal_count < 0:
        raise DomainError(f"ai_signal_count must be >= 0, got {ai_signal_count!r}")
    out = precision
    if used:
        out = out + 1.0 / signal_noise_var
    return out + ai_signal_count / ai_signal_var


def update_mean(mean, precision, signal, signal_var):
    """Conjugate Normal update of a posterior mean given one signal."""
    _positive("precision", precision)
    _positive("signal_var", signal_var)
    inv = 1.0 / signal_var
    return (precision * mean + signal * inv) / (precision + inv)


def utility(mean, precision, risk_aversion):
    """Mean-variance payoff ``mean - risk_aversion / (2 * precision)``."""
    _positive("precision", precision)
    return mean - 0.5 * risk_aversion / precision


def switching_barrier(risk_aversion, precision_new, precision_current):
    """Extra mean productivity a new language needs to beat the current one."""
    _positive("precision_new", precision_new)
    _positive("precision_current", precision_current)
    return 0.5 * risk_aversion * (1.0 / precision_new - 1.0 / precision_current)


def activation_zone_width(risk_aversion, unknown_precision, precision_gain):
    """Width of the band of prior means that a precision gain pushes past the entry bar.

    Equals ``rho * d / (2 * p * (p + d))`` for baseline precision ``p`` and gain
    ``d``: zero without a gain and decreasing in ``p``.
    """
    _positive("unknown_precision", unknown_precision)
    if precision_gain < 0:
        raise DomainError(f"precision_gain must be >= 0, got {precision_gain!r}")
    p = unknown_precision
    return risk_aversion * precision_gain / (2.0 * p * (p + precision_gain))


def ai_exposure_to_enter(mean, risk_aversion, unknown_precision, entry_threshold, entry_cost, ai_rate):
    """Smallest number of AI periods after which an unused language enters.

    Solves ``unknown_precision + s * ai_rate >= rho / (2 * (mean - threshold + entry_cost))``
    for the integer ``s`` at which the entry inequality first holds strictly.
    Returns ``None`` when the language can never enter through the precision
    channel alone.
    """
    slack = mean - entry_threshold + entry_cost
    if slack <= 0 or ai_rate <= 0:
        return None
    needed = risk_aversion / (2.0 * slack)
    s = max(0, math.ceil((needed - unknown_precision) / ai_rate))
    while utility(mean, unknown_precision + s * ai_rate, risk_aversion) <= entry_threshold - entry_cost:
        s += 1
    return s


@dataclass(frozen=True)
class ModelParams:
    """Parameters of the learning model.

    ``ai_signal_count = 0`` switches the AI channel off.  The entry threshold
    is a fixed scalar.  ``max_known_languages`` and ``n_known_sectors`` govern
    how many languages/sectors start at the high precision.
    """

    n_languages: int = 12
    n_sectors: int = 6
    prior_precision_known: float = 4.0
    prior_precision_unknown: float = 0.25
    signal_noise_var: float = 1.0
    risk_aversion: float = 1.0
    ai_signal_count: float = 1.0
    ai_signal_var: float = 40.0
    entry_threshold: float = 0.0
    entry_cost: float = 0.2
    repo_base_cost: float = 0.25
    repo_cap: int = 10
    commit_rate: float = 8.0
    mean_prior_loc: float = -0.5
    mean_prior_scale: float = 1.0
    ai_updates_means: bool = True
    max_known_languages: int = 5
    n_known_sectors: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self):
        def need(cond, name, msg):
            if not cond:
                raise ConfigError(name, msg)

        need(isinstance(self.n_languages, (int, np.integer)) and self.n_languages >= 1, "n_languages", "must be a positive integer")
        need(isinstance(self.n_sectors, (int, np.integer)) and self.n_sectors >= 1, "n_sectors", "must be a positive integer")
        need(self.prior_precision_known > 0, "prior_precision_known", "must be > 0")
        need(self.prior_precision_unknown > 0, "prior_precision_unknown", "must be > 0")
        need(
            self.prior_precision_unknown < self.prior_precision_known,
            "prior_precision_unknown",
            "must be smaller than prior_precision_known",
        )
        need(self.signal_noise_var > 0, "signal_noise_var", "must be > 0")
        need(self.risk_aversion > 0, "risk_aversion", "must be > 0")
        need(self.ai_signal_count >= 0, "ai_signal_count", "must be >= 0")
        need(self.ai_signal_var > 0, "ai_signal_var", "must be > 0")
        need(self.entry_cost >= 0, "entry_cost", "must be >= 0")
        need(self.repo_base_cost >= 0, "repo_base_cost", "must be >= 0")
        need(isinstance(self.repo_cap, (int, np.integer)) and self.repo_cap >= 1, "repo_cap", "must be a positive integer")
        # commits are 1 + Poisson(commit_rate - 1) so the mean is commit_rate
        need(self.commit_rate >= 1, "commit_rate", "must be >= 1")
        need(self.mean_prior_scale >= 0, "mean_prior_scale", "must be >= 0")
        need(self.max_known_languages >= 1, "max_known_languages", "must be >= 1")
        need(
            1 <= self.n_known_sectors <= self.n_sectors,
            "n_known_sectors",
            "must be between 1 and n_sectors",
        )

    @property
    def ai_precision_rate(self):
        """Precision added to every belief per AI-active period."""
        return self.ai_signal_count / self.ai_signal_var

    def without_ai(self):
        return replace(self, ai_signal_count=0.0)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass
class DeveloperState:
    """Beliefs, truths and portfolio of one developer.

    ``adoption_period`` is 0 for a developer who never adopts AI.
    ``active_sectors`` holds the sectors worked in during the previous month;
    those sectors receive a usage signal in the next step.
    """

    id: int
    lang_mean: np.ndarray
    lang_precision: np.ndarray
    sector_mean: np.ndarray
    sector_precision: np.ndarray
    lang_truth: np.ndarray
    sector_truth: np.ndarray
    portfolio: np.ndarray
    ever_used: np.ndarray
    active_sectors: np.ndarray = None
    known_languages: np.ndarray = None
    adoption_period: int = 0
    period: int = 0

    def __post_init__(self):
        if self.active_sectors is None:
            self.active_sectors = np.zeros(len(self.sector_mean), dtype=bool)
        if self.known_languages is None:
            self.known_languages = self.lang_precision > self.lang_precision.min()

    def copy(self):
        return replace(
            self,
            **{f.name: getattr(self, f.name).copy() for f in fields(self) if isinstance(getattr(self, f.name), np.ndarray)},
        )

    @property
    def is_specialist(self):
        return int(self.known_languages.sum()) <= 2

    @classmethod
    def initial(cls, id, params, known_languages, known_sectors, lang_mean, sector_mean, rng, adoption_period=0):
        """Fresh state with truths drawn from the prior.

        The starting portfolio is the known languages whose utility clears the
        entry threshold (no entry cost for incumbents).
        """
        K, S = params.n_languages, params.n_sectors
        pi_L = np.full(K, params.prior_precision_unknown)
        pi_L[np.asarray(known_languages, dtype=int)] = params.prior_precision_known
        pi_S = np.full(S, params.prior_precision_unknown)
        pi_S[np.asarray(known_sectors, dtype=int)] = params.prior_precision_known
        lang_mean = np.asarray(lang_mean, dtype=float).copy()
        sector_mean = np.asarray(sector_mean, dtype=float).copy()
        th_L = lang_mean + rng.standard_normal(K) / np.sqrt(pi_L)
        th_S = sector_mean + rng.standard_normal(S) / np.sqrt(pi_S)
        known = np.zeros(K, dtype=bool)
        known[np.asarray(known_languages, dtype=int)] = True
        port = known & (lang_mean - 0.5 * params.risk_aversion / pi_L > params.entry_threshold)
        return cls(
            id=id,
            lang_mean=lang_mean,
            lang_precision=pi_L,
            sector_mean=sector_mean,
            sector_precision=pi_S,
            lang_truth=th_L,
            sector_truth=th_S,
            portfolio=port,
            ever_used=port.copy(),
            known_languages=known,
            adoption_period=adoption_period,
        )


def step_developer(state, params, period, ai_active, rng):
    """Advance one developer by one month and return the new state.

    Order within the month: usage signals for languages in the portfolio (and
    sectors worked in last month), then the AI channel if active, then the
    portfolio is recomputed with an entry cost charged to newcomers.  Repo
    choice, which also refreshes ``active_sectors``, happens in the simulator.
    """
    from ._kernels_py import StepConstants, step_batch

    if period < 1:
        raise DomainError(f"period must be >= 1, got {period}")
    K, S = params.n_languages, params.n_sectors
    new = state.copy()
    eps_L = rng.standard_normal(K)
    z_L = rng.standard_normal(K)
    eps_S = rng.standard_normal(S)
    z_S = rng.standard_normal(S)
    consts = StepConstants.from_params(params)
    arrays = [
        new.lang_mean[None, :],
        new.lang_precision[None, :],
        new.lang_truth[None, :],
        new.sector_mean[None, :],
        new.sector_precision[None, :],
        new.sector_truth[None, :],
    ]
    port = new.portfolio[None, :].copy()
    step_batch(
        *arrays,
        port,
        new.active_sectors[None, :],
        np.array([bool(ai_active)]),
        eps_L[None, :],
        z_L[None, :],
        eps_S[None, :],
        z_S[None, :],
        consts,
    )
    new.portfolio = port[0]
    new.ever_used = new.ever_used | new.portfolio
    new.period = period
    return new


__all__ = [
    "PRECISION_FLOOR",
    "ModelParams",
    "DeveloperState",
    "update_precision",
    "update_mean",
    "utility",
    "switching_barrier",
    "activation_zone_width",
    "ai_exposure_to_enter",
    "step_developer",
]

