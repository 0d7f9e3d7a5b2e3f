"""Weighted-particle posterior over the preference midpoint.

The filter keeps a fixed 1-D grid of candidate midpoints and updates only
the weights: after each observation every weight is multiplied by that
particle's likelihood for the observed choice and the set is renormalized.
There is no resampling or rejuvenation step, so the posterior is exactly an
importance-weighted grid and updates commute.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, DegeneratePosteriorError, ParameterError
from .psychometric import Choice, preference_matrix

DEFAULT_N_PARTICLES = 225

STRATIFIED = "stratified"
RANDOM = "random"


@dataclass(frozen=True, eq=False)
class ParticlePosterior:
    """Fixed particle positions plus normalized weights.

    ``slope`` and ``lapse`` define the likelihood shared by all particles;
    each particle is a candidate midpoint.
    """

    particles: np.ndarray
    weights: np.ndarray
    slope: float = 2.5
    lapse: float = 0.02

    def __post_init__(self):
        particles = np.asarray(self.particles, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if particles.shape != weights.shape or particles.ndim != 1:
            raise ConfigError("particles and weights must be 1-D arrays of equal length")
        if np.any(weights < 0):
            raise ConfigError("weights must be nonnegative")
        if abs(float(weights.sum()) - 1.0) > 1e-12:
            raise ConfigError(f"weights must sum to 1, got {weights.sum()!r}")
        if not (self.slope > 0):
            raise ParameterError("slope must be positive")
        if not (0.0 <= self.lapse <= 0.5):
            raise ParameterError("lapse must be in [0, 0.5]")
        particles.flags.writeable = False
        weights.flags.writeable = False
        object.__setattr__(self, "particles", particles)
        object.__setattr__(self, "weights", weights)

    def __len__(self) -> int:
        return self.particles.size


def init_posterior(
    scale_min: float,
    scale_max: float,
    n_particles: int = DEFAULT_N_PARTICLES,
    mode: str = STRATIFIED,
    rng: np.random.Generator | None = None,
    slope: float = 2.5,
    lapse: float = 0.02,
) -> ParticlePosterior:
    """Uniform-weight posterior over [scale_min, scale_max].

    ``stratified`` places particle i at min + (i - 0.5) * span / n (a
    deterministic grid, the default); ``random`` draws i.i.d. uniforms and
    requires a seeded rng.
    """
    if not scale_min < scale_max:
        raise ConfigError(f"scale_min ({scale_min}) must be below scale_max ({scale_max})")
    if n_particles < 2:
        raise ConfigError(f"need at least 2 particles, got {n_particles}")
    if mode == STRATIFIED:
        i = np.arange(1, n_particles + 1, dtype=float)
        particles = scale_min + (i - 0.5) * (scale_max - scale_min) / n_particles
    elif mode == RANDOM:
        if rng is None:
            raise ConfigError("random placement requires a seeded rng")
        particles = rng.uniform(scale_min, scale_max, size=n_particles)
    else:
        raise ConfigError(f"unknown placement mode {mode!r}")
    weights = np.full(n_particles, 1.0 / n_particles)
    return ParticlePosterior(particles=particles, weights=weights, slope=slope, lapse=lapse)


def update(posterior: ParticlePosterior, level: float, choice: Choice) -> ParticlePosterior:
    """Bayes update: new weights proportional to weight times likelihood.

    Returns a new posterior; the input is never mutated.  Raises
    DegeneratePosteriorError (leaving the input valid) if every particle has
    zero likelihood, which requires lapse = 0 and contradictory data.
    """
    if not np.isfinite(level):
        raise ParameterError("level must be finite")
    like = preference_matrix(posterior.particles, [level], posterior.slope, posterior.lapse)[0]
    if choice is Choice.PREFER_STANDARD:
        like = 1.0 - like
    w = posterior.weights * like
    total = float(w.sum())
    if total <= 0.0:
        raise DegeneratePosteriorError(
            f"all particle weights vanished at level {level} for {choice.value!r}"
        )
    return replace(posterior, weights=w / total)


def posterior_mean(posterior: ParticlePosterior) -> float:
    return float(posterior.weights @ posterior.particles)


def posterior_sd(posterior: ParticlePosterior) -> float:
    mean = posterior_mean(posterior)
    var = float(posterior.weights @ (posterior.particles - mean) ** 2)
    return float(np.sqrt(max(var, 0.0)))


def credible_interval(posterior: ParticlePosterior, mass: float) -> tuple[float, float]:
    """Smallest central interval holding at least ``mass`` of the weight.

    Central means equal tail mass (1-mass)/2 on each side, measured on the
    cumulative weights of the position-sorted particles.
    """
    if not (0.0 < mass < 1.0):
        raise ParameterError(f"mass must be in (0, 1), got {mass}")
    order = np.argsort(posterior.particles, kind="stable")
    particles = posterior.particles[order]
    cum = np.cumsum(posterior.weights[order])
    alpha = (1.0 - mass) / 2.0
    lo_idx = int(np.searchsorted(cum, alpha, side="left"))
    hi_idx = int(np.searchsorted(cum, 1.0 - alpha, side="left"))
    hi_idx = min(hi_idx, particles.size - 1)
    return float(particles[lo_idx]), float(particles[hi_idx])
