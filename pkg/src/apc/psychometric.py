"""Logistic preference models for paired-comparison judgments.

A rater sees a "standard" clip (the variant under test) next to a
"reference" clip drawn from an ordered quality scale.  The probability of
preferring the reference rises logistically with the reference level.  Two
shapes live here:

* ``PsychometricModel`` - midpoint/slope/lapse form used for inference and
  simulated observers.  The symmetric lapse compresses floor and ceiling so
  a single inconsistent response never annihilates posterior mass.
* ``FourParamLogistic`` - midpoint/slope/lower/upper form used when fitting
  response proportions after an experiment.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, xlogy

from .errors import ParameterError

LN2 = math.log(2.0)


class Choice(enum.Enum):
    """Outcome of one paired comparison, resolved to reference vs standard."""

    PREFER_REFERENCE = "reference"
    PREFER_STANDARD = "standard"


@dataclass(frozen=True)
class PsychometricModel:
    """Preference model: p(prefer reference) = lapse + (1-2*lapse)*sigmoid((x-m)/s).

    midpoint is in scale-level units, slope in scale-levels per logit unit.
    lapse in [0, 0.5]; 0.5 makes a pure chance observer.
    """

    midpoint: float
    slope: float = 2.5
    lapse: float = 0.02

    def __post_init__(self):
        if not math.isfinite(self.midpoint):
            raise ParameterError(f"midpoint must be finite, got {self.midpoint}")
        if not (self.slope > 0 and math.isfinite(self.slope)):
            raise ParameterError(f"slope must be positive and finite, got {self.slope}")
        if not (0.0 <= self.lapse <= 0.5):
            raise ParameterError(f"lapse must be in [0, 0.5], got {self.lapse}")


@dataclass(frozen=True)
class FourParamLogistic:
    """Logistic with free asymptotes: lower + (upper-lower)*sigmoid((x-m)/s)."""

    midpoint: float
    slope: float
    lower: float
    upper: float

    def __post_init__(self):
        if not math.isfinite(self.midpoint):
            raise ParameterError(f"midpoint must be finite, got {self.midpoint}")
        if not (self.slope > 0 and math.isfinite(self.slope)):
            raise ParameterError(f"slope must be positive and finite, got {self.slope}")
        if not (0.0 <= self.lower <= 1.0 and 0.0 <= self.upper <= 1.0):
            raise ParameterError("asymptotes must be probabilities")
        if self.lower >= self.upper:
            raise ParameterError(
                f"lower asymptote ({self.lower}) must be below upper ({self.upper})"
            )


def prefer_reference_prob(model: PsychometricModel, level):
    """Probability of preferring the reference shown at ``level``.

    Accepts a scalar or array of levels; result lies in [lapse, 1-lapse].
    """
    x = np.asarray(level, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ParameterError("level must be finite")
    p = model.lapse + (1.0 - 2.0 * model.lapse) * expit((x - model.midpoint) / model.slope)
    return float(p) if np.isscalar(level) or x.ndim == 0 else p


def eval_four_param(fit: FourParamLogistic, level):
    """Evaluate the four-parameter logistic at ``level`` (scalar or array)."""
    x = np.asarray(level, dtype=float)
    p = fit.lower + (fit.upper - fit.lower) * expit((x - fit.midpoint) / fit.slope)
    return float(p) if np.isscalar(level) or x.ndim == 0 else p


def binary_entropy(p):
    """Entropy of a Bernoulli(p) in nats, with 0*log(0) = 0.  Max is ln 2."""
    x = np.asarray(p, dtype=float)
    if np.any(x < 0.0) or np.any(x > 1.0):
        raise ParameterError("probability outside [0, 1]")
    h = -xlogy(x, x) - xlogy(1.0 - x, 1.0 - x)
    return float(h) if np.isscalar(p) or x.ndim == 0 else h


def _entropy(p: np.ndarray) -> np.ndarray:
    # unchecked fast path for internal use on values already in [0, 1]
    return -xlogy(p, p) - xlogy(1.0 - p, 1.0 - p)


def preference_matrix(midpoints, levels, slope: float, lapse: float) -> np.ndarray:
    """p[j, i] = prefer-reference probability at levels[j] for midpoint[i].

    Shared plumbing for the particle filter and the acquisition function.
    """
    m = np.asarray(midpoints, dtype=float)
    x = np.asarray(levels, dtype=float)
    z = (x[:, None] - m[None, :]) / slope
    return lapse + (1.0 - 2.0 * lapse) * expit(z)


def simulate_response(model: PsychometricModel, level: float, rng: np.random.Generator) -> Choice:
    """Draw one paired-comparison outcome from the model; deterministic per rng state."""
    p = prefer_reference_prob(model, float(level))
    return Choice.PREFER_REFERENCE if rng.random() < p else Choice.PREFER_STANDARD
