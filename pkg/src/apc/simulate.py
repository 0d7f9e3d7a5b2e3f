"""Monte-Carlo benchmark of the selection policies.

Simulated observers with known midpoints answer paired comparisons; each
policy runs a single-variant adaptive session per observer and the squared
error of the running estimate is averaged across observers at every trial
index.  With identical seeds the whole experiment is bit-reproducible, so
exported CSVs are byte-identical across runs.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit

from .errors import ConfigError, IngestError
from .policy import StaircaseState, staircase_estimate, staircase_next, staircase_observe
from .psychometric import Choice, _entropy, preference_matrix
from .session import POLICIES

CURVE_HEADER = ["policy", "trial", "mse", "n_observers", "seed"]


@dataclass(frozen=True)
class SimConfig:
    policies: tuple[str, ...] = ("bald", "staircase", "random")
    n_observers: int = 500
    trials_max: int = 100
    true_q: float | tuple[float, float] = (5.0, 45.0)
    slope: float = 2.5
    lapse: float = 0.02
    seed: int = 0
    scale_levels: int = 50
    n_particles: int = 225

    def __post_init__(self):
        object.__setattr__(self, "policies", tuple(self.policies))
        unknown = set(self.policies) - set(POLICIES)
        if not self.policies or unknown:
            raise ConfigError(f"policies must be a nonempty subset of {POLICIES}")
        if self.n_observers < 1:
            raise ConfigError("n_observers must be at least 1")
        if self.trials_max < 1:
            raise ConfigError("trials_max must be at least 1")
        if not self.slope > 0:
            raise ConfigError("slope must be positive")
        if not (0.0 <= self.lapse <= 0.5):
            raise ConfigError("lapse must be in [0, 0.5]")
        if isinstance(self.true_q, tuple):
            lo, hi = self.true_q
            if not lo < hi:
                raise ConfigError("true_q range must have lo < hi")


@dataclass(frozen=True)
class SimResult:
    config: SimConfig
    # per policy: mse[t-1] is the mean squared estimate error after trial t
    curves: dict[str, np.ndarray]


def _observer_rng(seed: int, observer: int, *key: int) -> np.random.Generator:
    # every stream hangs off (master seed, observer index, purpose key) so
    # observers are independent and the reduction order never matters
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(observer, *key)))


def _draw_true_q(config: SimConfig, observer: int) -> float:
    if isinstance(config.true_q, tuple):
        lo, hi = config.true_q
        return float(_observer_rng(config.seed, observer, 0).uniform(lo, hi))
    return float(config.true_q)


def _response_uniforms(config: SimConfig, observer: int, policy_idx: int) -> np.ndarray:
    return _observer_rng(config.seed, observer, 1, policy_idx).random(config.trials_max)


def _particle_grid(config: SimConfig) -> np.ndarray:
    i = np.arange(1, config.n_particles + 1, dtype=float)
    return 1.0 + (i - 0.5) * (config.scale_levels - 1.0) / config.n_particles


def _posterior_policy_errors(config: SimConfig, policy: str, policy_idx: int) -> np.ndarray:
    """Squared estimate errors, shape (n_observers, trials_max), for the
    posterior-backed policies (bald and random), vectorized across observers."""
    n_obs, trials = config.n_observers, config.trials_max
    particles = _particle_grid(config)
    levels = np.arange(1, config.scale_levels + 1, dtype=float)
    p_matrix = preference_matrix(particles, levels, config.slope, config.lapse)
    h_matrix = _entropy(p_matrix)

    q_true = np.array([_draw_true_q(config, i) for i in range(n_obs)])
    u_resp = np.stack([_response_uniforms(config, i, policy_idx) for i in range(n_obs)])
    if policy == "random":
        chosen = np.stack(
            [
                _observer_rng(config.seed, i, 2, policy_idx).integers(
                    1, config.scale_levels + 1, trials
                )
                for i in range(n_obs)
            ]
        )

    weights = np.full((n_obs, particles.size), 1.0 / particles.size)
    errors = np.empty((n_obs, trials))
    for t in range(trials):
        if policy == "bald":
            p_bar = weights @ p_matrix.T
            info = _entropy(p_bar) - weights @ h_matrix.T
            level_idx = np.argmax(info, axis=1)  # first max = lowest level
        else:
            level_idx = chosen[:, t] - 1
        level_values = levels[level_idx]
        p_true = config.lapse + (1.0 - 2.0 * config.lapse) * expit(
            (level_values - q_true) / config.slope
        )
        prefer_ref = u_resp[:, t] < p_true
        like = p_matrix[level_idx]
        like = np.where(prefer_ref[:, None], like, 1.0 - like)
        weights = weights * like
        weights /= weights.sum(axis=1, keepdims=True)
        estimates = weights @ particles
        errors[:, t] = (estimates - q_true) ** 2
    return errors


def _staircase_errors(config: SimConfig, policy_idx: int) -> np.ndarray:
    n_obs, trials = config.n_observers, config.trials_max
    errors = np.empty((n_obs, trials))
    for i in range(n_obs):
        q = _draw_true_q(config, i)
        u = _response_uniforms(config, i, policy_idx)
        state = StaircaseState(start_level=config.scale_levels, n_levels=config.scale_levels)
        for t in range(trials):
            level = staircase_next(state)
            p = config.lapse + (1.0 - 2.0 * config.lapse) * expit((level - q) / config.slope)
            choice = Choice.PREFER_REFERENCE if u[t] < p else Choice.PREFER_STANDARD
            staircase_observe(state, level, choice)
            errors[i, t] = (staircase_estimate(state) - q) ** 2
    return errors


def run_mse_experiment(config: SimConfig) -> SimResult:
    """Mean squared PSE error per trial index for every requested policy."""
    curves: dict[str, np.ndarray] = {}
    for policy in config.policies:
        policy_idx = POLICIES.index(policy)
        if policy == "staircase":
            errors = _staircase_errors(config, policy_idx)
        else:
            errors = _posterior_policy_errors(config, policy, policy_idx)
        curves[policy] = errors.mean(axis=0)
    return SimResult(config=config, curves=curves)


def export_curves(result: SimResult, path: Path | str) -> None:
    """Write `policy,trial,mse,n_observers,seed` rows sorted by (policy, trial)."""
    if not result.curves:
        raise ConfigError("no curves to export")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CURVE_HEADER)
        for policy in sorted(result.curves):
            for t, mse in enumerate(result.curves[policy], start=1):
                writer.writerow(
                    [policy, t, repr(float(mse)), result.config.n_observers, result.config.seed]
                )


def load_curves(path: Path | str) -> dict[str, np.ndarray]:
    """Round-trip reader for exported MSE curves."""
    per_policy: dict[str, list[tuple[int, float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if list(reader.fieldnames or []) != CURVE_HEADER:
            raise IngestError(f"{path}: expected header {','.join(CURVE_HEADER)}")
        for row in reader:
            per_policy.setdefault(row["policy"], []).append(
                (int(row["trial"]), float(row["mse"]))
            )
    out = {}
    for policy, rows in per_policy.items():
        rows.sort()
        out[policy] = np.array([mse for _, mse in rows])
    return out
