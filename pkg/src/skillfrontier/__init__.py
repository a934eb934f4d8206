"""Simulate AI-driven skill-frontier expansion and recover it with staggered DiD."""

__version__ = "0.1.0"

from ._backend import BACKEND
from .aggregate import BootstrapSettings, event_study, multiplier_bootstrap, pretrend_wald, simple_att
from .did import Design, att_gt, att_gt_all, fit_outcome_regression, fit_propensity
from .model import (
    DeveloperState,
    ModelParams,
    activation_zone_width,
    step_developer,
    switching_barrier,
    update_mean,
    update_precision,
    utility,
)
from .panel import OUTCOMES, CommitRecord, CommitTable, Panel, build_outcomes, filter_bot_login, shannon_entropy, summarize
from .sim import SimPanelConfig, check_propositions, inject_effect, simulate_panel

__all__ = [
    "BACKEND",
    "BootstrapSettings",
    "CommitRecord",
    "CommitTable",
    "Design",
    "DeveloperState",
    "ModelParams",
    "OUTCOMES",
    "Panel",
    "SimPanelConfig",
    "activation_zone_width",
    "att_gt",
    "att_gt_all",
    "build_outcomes",
    "check_propositions",
    "event_study",
    "filter_bot_login",
    "fit_outcome_regression",
    "fit_propensity",
    "inject_effect",
    "multiplier_bootstrap",
    "pretrend_wald",
    "shannon_entropy",
    "simple_att",
    "simulate_panel",
    "step_developer",
    "summarize",
    "switching_barrier",
    "update_mean",
    "update_precision",
    "utility",
]
