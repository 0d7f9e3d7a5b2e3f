"""Next-reference-level selection policies.

Three interchangeable rules decide which scale level the next reference
clip is drawn from:

* ``bald`` - maximize the mutual information between the next binary
  response and the midpoint, I(x) = H(p_bar(x)) - sum_i w_i H(p_i(x)),
  evaluated on the particle posterior over every candidate level.
* ``staircase`` - classic 1-up/1-down heuristic: start at the top of the
  scale, step down after each prefer-reference response, up after each
  prefer-standard response.
* ``random`` - uniform level draw, the baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NoEstimateError, ParameterError
from .posterior import ParticlePosterior
from .psychometric import LN2, Choice, _entropy, preference_matrix

DEFAULT_LEVELS = 50


def bald_acquisition(posterior: ParticlePosterior, candidate_levels) -> np.ndarray:
    """Mutual information (nats) of the next response at each candidate level.

    Each value lies in [0, ln 2]; it is zero exactly when all positive-weight
    particles predict the same response probability at that level.
    """
    levels = np.asarray(candidate_levels, dtype=float)
    if levels.size == 0:
        raise ParameterError("candidate_levels must be nonempty")
    p = preference_matrix(posterior.particles, levels, posterior.slope, posterior.lapse)
    p_bar = p @ posterior.weights
    info = _entropy(p_bar) - _entropy(p) @ posterior.weights
    # exact math keeps info in [0, ln 2]; clip float residue at the edges
    return np.clip(info, 0.0, LN2)


def select_next_bald(posterior: ParticlePosterior, levels=None) -> int:
    """Level with maximum acquisition; ties broken toward the lowest level."""
    if levels is None:
        levels = np.arange(1, DEFAULT_LEVELS + 1)
    levels = np.asarray(levels)
    info = bald_acquisition(posterior, levels)
    best = np.flatnonzero(info == info.max())
    return int(levels[best].min())


@dataclass
class BaldState:
    """Policy state for BALD selection: just the running posterior."""

    posterior: ParticlePosterior
    n_levels: int = DEFAULT_LEVELS

    def next_level(self) -> int:
        return select_next_bald(self.posterior, np.arange(1, self.n_levels + 1))


@dataclass
class StaircaseState:
    """1-up/1-down staircase bookkeeping.

    ``history`` holds (presented level, choice) pairs.  A reversal is
    recorded at the presented level whenever the response-implied direction
    (down after prefer-reference, up after prefer-standard) flips.
    """

    start_level: int = DEFAULT_LEVELS
    n_levels: int = DEFAULT_LEVELS
    history: list[tuple[int, Choice]] = field(default_factory=list)
    reversal_levels: list[int] = field(default_factory=list)
    last_direction: int | None = None


def _clamp(level: int, n_levels: int) -> int:
    return max(1, min(n_levels, level))


def staircase_next(state: StaircaseState) -> int:
    """Level to present now: the start level before any history, else the
    last level stepped by the last choice, clamped to [1, n_levels]."""
    if not state.history:
        return _clamp(state.start_level, state.n_levels)
    last_level, last_choice = state.history[-1]
    step = -1 if last_choice is Choice.PREFER_REFERENCE else 1
    return _clamp(last_level + step, state.n_levels)


def staircase_observe(state: StaircaseState, level: int, choice: Choice) -> None:
    """Record one response at a presented level, detecting reversals in place."""
    direction = -1 if choice is Choice.PREFER_REFERENCE else 1
    if state.last_direction is not None and direction != state.last_direction:
        state.reversal_levels.append(level)
    state.last_direction = direction
    state.history.append((level, choice))


def staircase_estimate(state: StaircaseState) -> float:
    """Point of subjective equality from the staircase trace.

    With at least 4 reversals: mean of the reversal levels after discarding
    the first two.  Otherwise: mean of the presented levels over the last
    half of the trials.
    """
    if not state.history:
        raise NoEstimateError("staircase has no recorded trials")
    if len(state.reversal_levels) >= 4:
        return float(np.mean(state.reversal_levels[2:]))
    levels = [level for level, _ in state.history]
    return float(np.mean(levels[len(levels) // 2 :]))


def staircase_spread(state: StaircaseState) -> float:
    """Uncertainty companion to the estimate: sd of the retained levels."""
    if not state.history:
        raise NoEstimateError("staircase has no recorded trials")
    if len(state.reversal_levels) >= 4:
        retained = state.reversal_levels[2:]
    else:
        levels = [level for level, _ in state.history]
        retained = levels[len(levels) // 2 :]
    if len(retained) < 2:
        return 0.0
    return float(np.std(retained, ddof=1))


def random_next(rng: np.random.Generator, n_levels: int = DEFAULT_LEVELS) -> int:
    """Uniform integer level in [1, n_levels]; deterministic given the rng state."""
    return int(rng.integers(1, n_levels + 1))


@dataclass
class RandomState:
    """Random-selection policy.

    Carries a posterior so the running estimate is computed exactly as for
    BALD, isolating level selection as the only difference between the two.
    """

    rng: np.random.Generator
    posterior: ParticlePosterior
    n_levels: int = DEFAULT_LEVELS

    def next_level(self) -> int:
        return random_next(self.rng, self.n_levels)


PolicyState = BaldState | StaircaseState | RandomState
