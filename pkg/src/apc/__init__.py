"""Adaptive paired-comparison toolkit.

Measures subjective quality with paired comparisons against an ordered
reference scale, choosing each trial's reference level adaptively (BALD on
a particle posterior, a staircase heuristic, or random), and ships the
surrounding apparatus: scale construction, post-hoc analysis, a simulation
benchmark, and an HTTP session service for live raters.
"""

from .psychometric import (
    Choice,
    FourParamLogistic,
    PsychometricModel,
    binary_entropy,
    eval_four_param,
    prefer_reference_prob,
    simulate_response,
)
from .posterior import (
    ParticlePosterior,
    credible_interval,
    init_posterior,
    posterior_mean,
    posterior_sd,
    update,
)
from .policy import (
    BaldState,
    RandomState,
    StaircaseState,
    bald_acquisition,
    random_next,
    select_next_bald,
    staircase_estimate,
    staircase_next,
    staircase_observe,
)
from .session import (
    PresentationOrder,
    QualityEstimate,
    SessionConfig,
    SessionState,
    TrialPlan,
    TrialRecord,
    create_session,
    replay,
    resolve_choice,
)

__all__ = [
    "Choice",
    "FourParamLogistic",
    "PsychometricModel",
    "binary_entropy",
    "eval_four_param",
    "prefer_reference_prob",
    "simulate_response",
    "ParticlePosterior",
    "credible_interval",
    "init_posterior",
    "posterior_mean",
    "posterior_sd",
    "update",
    "BaldState",
    "RandomState",
    "StaircaseState",
    "bald_acquisition",
    "random_next",
    "select_next_bald",
    "staircase_estimate",
    "staircase_next",
    "staircase_observe",
    "PresentationOrder",
    "QualityEstimate",
    "SessionConfig",
    "SessionState",
    "TrialPlan",
    "TrialRecord",
    "create_session",
    "replay",
    "resolve_choice",
]

__version__ = "0.1.0"
