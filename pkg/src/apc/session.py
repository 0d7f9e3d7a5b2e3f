"""Adaptive paired-comparison session orchestration.

A session interleaves the variants under test across a fixed number of
trials, one trial per (variant, clip) pair.  The full schedule of variant,
clip and presentation order is drawn from the seed at creation time so a
session is replayable; only the reference levels are chosen lazily, by the
per-variant policy, because they depend on the rater's answers.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, asdict
from typing import Iterable

import numpy as np

from .errors import (
    ConfigError,
    IntegrityError,
    NoEstimateError,
    ParameterError,
    SequencingError,
    SessionCompleteError,
    StateError,
)
from .policy import (
    BaldState,
    PolicyState,
    RandomState,
    StaircaseState,
    staircase_estimate,
    staircase_next,
    staircase_observe,
    staircase_spread,
)
from .posterior import init_posterior, posterior_mean, posterior_sd, update
from .psychometric import Choice

POLICIES = ("bald", "staircase", "random")

ANSWER_FIRST = "first"
ANSWER_SECOND = "second"


class PresentationOrder(enum.Enum):
    REFERENCE_FIRST = "reference-first"
    STANDARD_FIRST = "standard-first"


def resolve_choice(order: PresentationOrder, rater_answer: str) -> Choice:
    """Map the rater's first/second answer to a reference/standard choice."""
    if rater_answer not in (ANSWER_FIRST, ANSWER_SECOND):
        raise ParameterError(f"rater answer must be 'first' or 'second', got {rater_answer!r}")
    reference_first = order is PresentationOrder.REFERENCE_FIRST
    prefers_first = rater_answer == ANSWER_FIRST
    if reference_first == prefers_first:
        return Choice.PREFER_REFERENCE
    return Choice.PREFER_STANDARD


@dataclass(frozen=True)
class SessionConfig:
    variants: tuple[str, ...]
    clips: tuple[str, ...]
    seed: int
    trials_per_variant: int = 30
    scale_levels: int = 50
    policy: str = "bald"
    slope: float = 2.5
    lapse: float = 0.02
    n_particles: int = 225
    staircase_start: int | None = None
    particle_placement: str = "stratified"

    def __post_init__(self):
        object.__setattr__(self, "variants", tuple(self.variants))
        object.__setattr__(self, "clips", tuple(self.clips))
        if not self.variants:
            raise ConfigError("at least one variant is required")
        if len(set(self.variants)) != len(self.variants):
            raise ConfigError("variant ids must be unique")
        if len(set(self.clips)) != len(self.clips):
            raise ConfigError("clip ids must be unique")
        if self.trials_per_variant < 1:
            raise ConfigError("trials_per_variant must be at least 1")
        if self.trials_per_variant > len(self.clips):
            raise ConfigError(
                f"trials_per_variant ({self.trials_per_variant}) exceeds clip count "
                f"({len(self.clips)}); each clip is shown at most once per variant"
            )
        if self.scale_levels < 2:
            raise ConfigError("scale_levels must be at least 2")
        if self.policy not in POLICIES:
            raise ConfigError(f"policy must be one of {POLICIES}, got {self.policy!r}")
        if not self.slope > 0:
            raise ConfigError("slope must be positive")
        if not (0.0 <= self.lapse <= 0.5):
            raise ConfigError("lapse must be in [0, 0.5]")
        if self.n_particles < 2:
            raise ConfigError("n_particles must be at least 2")
        if self.staircase_start is not None and not (
            1 <= self.staircase_start <= self.scale_levels
        ):
            raise ConfigError("staircase_start must lie on the scale")
        if not isinstance(self.seed, int):
            raise ConfigError("seed must be an integer")

    @property
    def total_trials(self) -> int:
        return len(self.variants) * self.trials_per_variant

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variants"] = list(self.variants)
        d["clips"] = list(self.clips)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SessionConfig":
        return cls(**d)


@dataclass(frozen=True)
class TrialPlan:
    trial_index: int
    variant: str
    clip: str
    reference_level: int
    order: PresentationOrder


@dataclass(frozen=True)
class TrialRecord:
    plan: TrialPlan
    choice: Choice
    timestamp: float


@dataclass(frozen=True)
class QualityEstimate:
    variant: str
    pse: float
    uncertainty: float
    n_trials: int
    method: str


STATUS_ACTIVE = "active"
STATUS_COMPLETE = "complete"


class SessionState:
    """Serial state machine for one rating session.

    All mutations for a session are totally ordered; distinct sessions are
    independent.  Do not share one instance across unsynchronized threads.
    """

    def __init__(self, config: SessionConfig):
        self.config = config
        self.records: list[TrialRecord] = []
        self._pending: TrialPlan | None = None
        self._schedule = self._draw_schedule()
        self._policies = self._init_policies()

    # -- construction ------------------------------------------------------

    def _draw_schedule(self) -> list[tuple[str, str, PresentationOrder]]:
        cfg = self.config
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(0,)))
        pairs: list[tuple[str, str]] = []
        for variant in cfg.variants:
            chosen = rng.permutation(len(cfg.clips))[: cfg.trials_per_variant]
            pairs.extend((variant, cfg.clips[i]) for i in chosen)
        slot_order = rng.permutation(len(pairs))
        orders = rng.random(len(pairs))
        schedule = []
        for slot, pair_idx in enumerate(slot_order):
            variant, clip = pairs[pair_idx]
            order = (
                PresentationOrder.REFERENCE_FIRST
                if orders[slot] < 0.5
                else PresentationOrder.STANDARD_FIRST
            )
            schedule.append((variant, clip, order))
        return schedule

    def _init_policies(self) -> dict[str, PolicyState]:
        cfg = self.config
        policies: dict[str, PolicyState] = {}
        for k, variant in enumerate(cfg.variants):
            if cfg.policy == "bald":
                post = init_posterior(
                    1.0, float(cfg.scale_levels), cfg.n_particles,
                    mode=cfg.particle_placement,
                    rng=np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(1, k))),
                    slope=cfg.slope, lapse=cfg.lapse,
                )
                policies[variant] = BaldState(posterior=post, n_levels=cfg.scale_levels)
            elif cfg.policy == "staircase":
                policies[variant] = StaircaseState(
                    start_level=cfg.staircase_start or cfg.scale_levels,
                    n_levels=cfg.scale_levels,
                )
            else:
                post = init_posterior(
                    1.0, float(cfg.scale_levels), cfg.n_particles,
                    mode=cfg.particle_placement,
                    rng=np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(1, k))),
                    slope=cfg.slope, lapse=cfg.lapse,
                )
                policies[variant] = RandomState(
                    rng=np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(2, k))),
                    posterior=post,
                    n_levels=cfg.scale_levels,
                )
        return policies

    # -- read-only views ----------------------------------------------------

    @property
    def cursor(self) -> int:
        return len(self.records)

    @property
    def status(self) -> str:
        return STATUS_COMPLETE if self.cursor >= self.config.total_trials else STATUS_ACTIVE

    def policy_state(self, variant: str) -> PolicyState:
        return self._policies[variant]

    def trials_for(self, variant: str) -> list[TrialRecord]:
        return [r for r in self.records if r.plan.variant == variant]

    # -- the trial loop ------------------------------------------------------

    def next_trial(self) -> TrialPlan:
        """Plan the trial at the cursor; idempotent until its response arrives."""
        if self.status == STATUS_COMPLETE:
            raise SessionCompleteError(
                f"session complete after {self.config.total_trials} trials"
            )
        if self._pending is not None:
            return self._pending
        variant, clip, order = self._schedule[self.cursor]
        state = self._policies[variant]
        if isinstance(state, StaircaseState):
            level = staircase_next(state)
        else:
            level = state.next_level()
        self._pending = TrialPlan(
            trial_index=self.cursor,
            variant=variant,
            clip=clip,
            reference_level=int(level),
            order=order,
        )
        return self._pending

    def record_response(
        self, trial_index: int, rater_answer: str, timestamp: float | None = None
    ) -> "SessionState":
        """Resolve the answer against presentation order and advance the session."""
        plan = self.next_trial()  # raises SessionCompleteError on a finished session
        if trial_index != plan.trial_index:
            raise SequencingError(
                f"expected a response for trial {plan.trial_index}, got {trial_index}"
            )
        choice = resolve_choice(plan.order, rater_answer)
        return self._record_choice(plan, choice, timestamp)

    def _record_choice(
        self, plan: TrialPlan, choice: Choice, timestamp: float | None
    ) -> "SessionState":
        state = self._policies[plan.variant]
        if isinstance(state, StaircaseState):
            staircase_observe(state, plan.reference_level, choice)
        else:
            state.posterior = update(state.posterior, float(plan.reference_level), choice)
        self.records.append(
            TrialRecord(plan=plan, choice=choice, timestamp=time.time() if timestamp is None else timestamp)
        )
        self._pending = None
        return self

    # -- estimates ------------------------------------------------------------

    def estimate(self, variant: str) -> QualityEstimate:
        """Current quality estimate for one variant.

        Posterior-backed policies report the prior mean before any data;
        the staircase needs at least one recorded trial.
        """
        if variant not in self._policies:
            raise StateError(f"unknown variant {variant!r}")
        state = self._policies[variant]
        n = len(self.trials_for(variant))
        if isinstance(state, StaircaseState):
            if n == 0:
                raise NoEstimateError(f"no trials recorded for variant {variant!r}")
            pse = staircase_estimate(state)
            spread = staircase_spread(state)
        else:
            pse = posterior_mean(state.posterior)
            spread = posterior_sd(state.posterior)
        return QualityEstimate(
            variant=variant,
            pse=pse,
            uncertainty=spread,
            n_trials=n,
            method=self.config.policy,
        )

    def estimates(self) -> list[QualityEstimate]:
        out = []
        for variant in self.config.variants:
            try:
                out.append(self.estimate(variant))
            except NoEstimateError:
                out.append(
                    QualityEstimate(
                        variant=variant,
                        pse=float("nan"),
                        uncertainty=float("nan"),
                        n_trials=len(self.trials_for(variant)),
                        method=self.config.policy,
                    )
                )
        return out


def create_session(config: SessionConfig) -> SessionState:
    return SessionState(config)


def verify_plan(expected: TrialPlan, logged: TrialPlan) -> None:
    """Raise IntegrityError naming the first divergent field, if any."""
    for field_name in ("trial_index", "variant", "clip", "reference_level", "order"):
        want = getattr(expected, field_name)
        got = getattr(logged, field_name)
        if want != got:
            raise IntegrityError(
                f"trial {expected.trial_index}: logged {field_name}={got!r} "
                f"but reconstruction yields {want!r}",
                trial_index=expected.trial_index,
            )


def replay(event_log: Iterable[TrialRecord], config: SessionConfig) -> SessionState:
    """Rebuild a session from its recorded trials, verifying determinism.

    The reconstructed schedule and policy decisions must agree with every
    logged plan; a tampered or mismatched log raises IntegrityError at the
    first divergent trial.
    """
    state = create_session(config)
    for record in event_log:
        expected = state.next_trial()
        verify_plan(expected, record.plan)
        state._record_choice(expected, record.choice, record.timestamp)
    return state
