"""Post-hoc analysis of rating experiments.

Covers the full read-out chain: four-parameter logistic fits of
prefer-reference proportions (damped Gauss-Newton with multi-start),
point-of-subjective-equality extraction, rater and fit screening, MOS and
differential DS-MOS scoring, and paired effect sizes with Bonferroni
correction.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import stats
from scipy.special import expit, logit

from .errors import (
    IngestError,
    InsufficientDataError,
    NoEstimateError,
    PairingError,
    ParameterError,
    UndefinedEffectError,
)
from .psychometric import FourParamLogistic

HIDDEN_REFERENCE = "hidden-reference"

MOS_SCALE = "MOS"
DSMOS_SCALE = "DS-MOS"


@dataclass(frozen=True)
class ProportionData:
    """Per-level response counts: how often the reference looked better."""

    levels: np.ndarray
    n_shown: np.ndarray
    n_prefer_reference: np.ndarray

    def __post_init__(self):
        levels = np.asarray(self.levels, dtype=float)
        shown = np.asarray(self.n_shown, dtype=int)
        pref = np.asarray(self.n_prefer_reference, dtype=int)
        if not (levels.shape == shown.shape == pref.shape) or levels.ndim != 1:
            raise ParameterError("levels, n_shown, n_prefer_reference must be equal-length 1-D")
        if np.any(shown < 0) or np.any(pref < 0) or np.any(pref > shown):
            raise ParameterError("need 0 <= n_prefer_reference <= n_shown")
        if len(np.unique(levels)) != levels.size:
            raise ParameterError("levels must be distinct")
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "n_shown", shown)
        object.__setattr__(self, "n_prefer_reference", pref)


@dataclass(frozen=True)
class RatingRecord:
    rater_id: str
    clip_id: str
    variant_id: str  # or HIDDEN_REFERENCE
    rating: int
    scale: str = MOS_SCALE

    def __post_init__(self):
        if self.rating not in (1, 2, 3, 4, 5):
            raise ParameterError(f"rating must be an integer 1..5, got {self.rating}")


@dataclass(frozen=True)
class ScreenResult:
    include: bool
    reason: str | None = None


@dataclass(frozen=True)
class EffectSizeReport:
    label: str
    d: float
    t: float
    p_raw: float
    p_adjusted: float
    significant: bool
    n_pairs: int


@dataclass
class FitResult:
    """Best four-parameter fit plus Gauss-Newton diagnostics."""

    params: FourParamLogistic
    converged: bool
    residual_norm: float
    standard_errors: dict[str, float]
    n_levels: int
    n_iterations: int
    objective_history: list[float] = field(default_factory=list)


# -- four-parameter NLS fit ----------------------------------------------------


def _unpack(theta: np.ndarray) -> tuple[float, float, float, float]:
    m, log_slope, a, b = theta
    slope = math.exp(log_slope)
    lower = float(expit(a))
    upper = lower + (1.0 - lower) * float(expit(b))
    return m, slope, lower, upper


def _model_and_jacobian(theta: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    m, log_slope, a, b = theta
    slope = math.exp(log_slope)
    la, lb = expit(a), expit(b)
    lower = la
    upper = lower + (1.0 - lower) * lb
    z = (x - m) / slope
    s = expit(z)
    sp = s * (1.0 - s)
    f = lower + (upper - lower) * s
    dl_da = la * (1.0 - la)
    du_da = dl_da * (1.0 - lb)
    du_db = (1.0 - lower) * lb * (1.0 - lb)
    jac = np.column_stack(
        [
            -(upper - lower) * sp / slope,  # d/dm
            -(upper - lower) * sp * z,  # d/dlog_slope
            (1.0 - s) * dl_da + s * du_da,  # d/da
            s * du_db,  # d/db
        ]
    )
    return f, jac


# per-iteration limits on (midpoint, log slope, lower coord, upper coord)
_MAX_STEP = np.array([10.0, 1.0, 2.0, 2.0])


def _damped_gauss_newton(
    theta0: np.ndarray,
    x: np.ndarray,
    p_hat: np.ndarray,
    w: np.ndarray,
    max_iters: int = 500,
) -> tuple[np.ndarray, float, bool, int, list[float]]:
    theta = theta0.copy()
    f, jac = _model_and_jacobian(theta, x)
    sse = float(w @ (p_hat - f) ** 2)
    history = [sse]
    lam = 1e-3
    converged = False
    iters = 0
    scale = float(w.sum())
    for iters in range(1, max_iters + 1):
        r = p_hat - f
        jtw = jac.T * w
        grad = jtw @ r
        if float(np.max(np.abs(grad))) <= 1e-12 * scale:
            converged = True
            break
        hess = jtw @ jac
        diag = np.diag(hess).copy()
        diag[diag <= 0.0] = 1e-12
        accepted = False
        for _ in range(60):
            try:
                delta = np.linalg.solve(hess + lam * np.diag(diag), grad)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            # trust box: flat directions (saturated asymptotes) otherwise get
            # unbounded Gauss-Newton steps and strand the fit on a plateau
            delta = np.clip(delta, -_MAX_STEP, _MAX_STEP)
            f_try, jac_try = _model_and_jacobian(theta + delta, x)
            sse_try = float(w @ (p_hat - f_try) ** 2)
            if sse_try <= sse:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            break
        step = float(np.max(np.abs(delta)))
        theta = theta + delta
        f, jac = f_try, jac_try
        improvement = sse - sse_try
        sse = sse_try
        history.append(sse)
        lam = max(lam / 3.0, 1e-12)
        # only trust a tiny improvement as convergence when the trust region
        # is open (small damping); a huge lambda makes any step look flat
        if lam <= 1e-3 and (improvement <= 1e-15 * (1.0 + sse) or step <= 1e-13):
            converged = True
            break
    return theta, sse, converged, iters, history


def _standard_errors(theta: np.ndarray, x, p_hat, w, sse: float) -> dict[str, float]:
    n = x.size
    if n <= 4:
        return {k: float("nan") for k in ("midpoint", "slope", "lower", "upper")}
    _, jac = _model_and_jacobian(theta, x)
    hess = (jac.T * w) @ jac
    sigma2 = sse / (n - 4)
    cov = sigma2 * np.linalg.pinv(hess)
    m, slope, lower, upper = _unpack(theta)
    la, lb = expit(theta[2]), expit(theta[3])
    dl_da = la * (1.0 - la)
    du = np.array([0.0, 0.0, dl_da * (1.0 - lb), (1.0 - lower) * lb * (1.0 - lb)])
    return {
        "midpoint": float(np.sqrt(max(cov[0, 0], 0.0))),
        "slope": float(slope * np.sqrt(max(cov[1, 1], 0.0))),
        "lower": float(dl_da * np.sqrt(max(cov[2, 2], 0.0))),
        "upper": float(np.sqrt(max(du @ cov @ du, 0.0))),
    }


def fit_logistic_curve(levels, proportions, weights=None, n_starts: int = 5) -> FitResult:
    """Weighted NLS fit of a four-parameter logistic to observed proportions.

    Minimizes sum(w * (p_hat - model)^2) by damped Gauss-Newton from
    ``n_starts`` initial midpoints spread across the observed level range.
    Accepted steps never increase the objective.  Non-convergence across all
    starts is reported in the result, not raised, so it can feed screening.
    """
    x = np.asarray(levels, dtype=float)
    p_hat = np.asarray(proportions, dtype=float)
    shown = np.ones_like(x) if weights is None else np.asarray(weights, dtype=float)
    if x.size < 4:
        raise InsufficientDataError(
            f"need at least 4 distinct levels with data, got {x.size}"
        )
    lo, hi = float(x.min()), float(x.max())
    span = max(hi - lo, 1.0)
    lower0 = float(np.clip(p_hat.min(), 0.01, 0.45))
    upper0 = float(np.clip(p_hat.max(), lower0 + 0.05, 0.99))
    log_slope0 = math.log(max(span / 6.0, 0.5))
    a0 = float(logit(lower0))
    b0 = float(logit((upper0 - lower0) / (1.0 - lower0)))

    best: tuple[np.ndarray, float, bool, int, list[float]] | None = None
    for k in range(n_starts):
        m0 = lo + (2 * k + 1) / (2 * n_starts) * span
        theta0 = np.array([m0, log_slope0, a0, b0])
        candidate = _damped_gauss_newton(theta0, x, p_hat, shown)
        if best is None:
            best = candidate
            continue
        _, sse_b, conv_b, _, _ = best
        _, sse_c, conv_c, _, _ = candidate
        if (conv_c, -sse_c) > (conv_b, -sse_b):
            best = candidate
    theta, sse, converged, iters, history = best
    m, slope, lower, upper = _unpack(theta)
    return FitResult(
        params=FourParamLogistic(midpoint=float(m), slope=slope, lower=lower, upper=upper),
        converged=converged,
        residual_norm=float(np.sqrt(sse)),
        standard_errors=_standard_errors(theta, x, p_hat, shown, sse),
        n_levels=int(x.size),
        n_iterations=iters,
        objective_history=history,
    )


def fit_logistic_nls(data: ProportionData, n_starts: int = 5) -> FitResult:
    """Four-parameter fit of per-level response counts, weighted by n_shown."""
    keep = data.n_shown > 0
    x = data.levels[keep]
    shown = data.n_shown[keep].astype(float)
    if x.size < 4:
        raise InsufficientDataError(
            f"need at least 4 distinct levels with data, got {x.size}"
        )
    return fit_logistic_curve(x, data.n_prefer_reference[keep] / shown, shown, n_starts)


def pse(result: FitResult) -> float:
    """The fitted midpoint, the subjective-equality estimate."""
    if not result.converged:
        raise NoEstimateError("fit did not converge; no PSE estimate")
    return result.params.midpoint


# -- screening -------------------------------------------------------------------


def screen_rater(records: Sequence[RatingRecord], threshold: float = 0.95) -> ScreenResult:
    """Exclude raters whose responses are dominated by one rating value.

    Exclusion requires strictly more than ``threshold`` of all responses
    (pooled across variants) to be a single rating.
    """
    if not records:
        raise InsufficientDataError("no rating records for this rater")
    counts: dict[int, int] = {}
    for r in records:
        counts[r.rating] = counts.get(r.rating, 0) + 1
    top_rating, top_count = max(counts.items(), key=lambda kv: kv[1])
    if top_count > threshold * len(records):
        share = top_count / len(records)
        return ScreenResult(
            include=False,
            reason=f"non-discriminating: {share:.1%} of responses were rating {top_rating}",
        )
    return ScreenResult(include=True)


def screen_apc_fit(
    result: FitResult,
    scale_min: float = 1.0,
    scale_max: float = 50.0,
    min_range: float = 0.25,
) -> ScreenResult:
    """Exclude fits too poorly discriminative to trust the midpoint."""
    if not result.converged:
        return ScreenResult(include=False, reason="fit did not converge")
    rng = result.params.upper - result.params.lower
    if rng < min_range:
        return ScreenResult(
            include=False, reason=f"non-discriminative: fitted range {rng:.3f} < {min_range}"
        )
    if not (scale_min <= result.params.midpoint <= scale_max):
        return ScreenResult(
            include=False,
            reason=f"midpoint {result.params.midpoint:.2f} outside scale "
            f"[{scale_min:g}, {scale_max:g}]",
        )
    return ScreenResult(include=True)


# -- scoring ------------------------------------------------------------------------


def dsmos_differential(variant_rating: int, hidden_ref_rating: int) -> float:
    """Differential score: 5 + (variant - hidden reference), clamped to [1, 5].

    A score of 5 means the variant looked as good as its minimally impaired
    hidden reference.
    """
    for r in (variant_rating, hidden_ref_rating):
        if r not in (1, 2, 3, 4, 5):
            raise ParameterError(f"rating must be an integer 1..5, got {r}")
    return float(min(5, max(1, 5 + variant_rating - hidden_ref_rating)))


def dsmos_scores(records: Sequence[RatingRecord]) -> dict[tuple[str, str, str], float]:
    """Differential scores keyed by (rater, variant, clip).

    Every (rater, clip) needs exactly one hidden-reference rating; a missing
    partner raises PairingError.
    """
    refs: dict[tuple[str, str], int] = {}
    for r in records:
        if r.variant_id == HIDDEN_REFERENCE:
            refs[(r.rater_id, r.clip_id)] = r.rating
    out: dict[tuple[str, str, str], float] = {}
    for r in records:
        if r.variant_id == HIDDEN_REFERENCE:
            continue
        key = (r.rater_id, r.clip_id)
        if key not in refs:
            raise PairingError(
                f"no hidden-reference rating for rater {r.rater_id!r} clip {r.clip_id!r}"
            )
        out[(r.rater_id, r.variant_id, r.clip_id)] = dsmos_differential(r.rating, refs[key])
    return out


@dataclass(frozen=True)
class MosSummary:
    mean: float
    ci_lower: float
    ci_upper: float
    n_raters: int


def mos_aggregate(ratings_by_rater: Mapping[str, Sequence[float]]) -> MosSummary:
    """Across-rater mean with a t-based 95% confidence interval.

    Each rater is first collapsed to their own mean, so raters (not
    individual clips) are the unit of analysis.
    """
    means = np.array([np.mean(v) for v in ratings_by_rater.values() if len(v) > 0])
    n = means.size
    if n < 2:
        raise InsufficientDataError("confidence interval needs at least 2 raters")
    center = float(means.mean())
    s = float(means.std(ddof=1))
    half = float(stats.t.ppf(0.975, n - 1)) * s / math.sqrt(n)
    return MosSummary(mean=center, ci_lower=center - half, ci_upper=center + half, n_raters=n)


# -- effect sizes ----------------------------------------------------------------------


def repeated_measures_d(x: Sequence[float], y: Sequence[float]) -> float:
    """Paired effect size: mean of the differences over their sample sd."""
    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y, dtype=float)
    if xa.shape != ya.shape or xa.ndim != 1:
        raise ParameterError("x and y must be matched 1-D sequences")
    if xa.size < 2:
        raise InsufficientDataError("need at least 2 matched pairs")
    diffs = xa - ya
    sd = float(diffs.std(ddof=1))
    if sd == 0.0:
        raise UndefinedEffectError("zero variance of paired differences: d is undefined")
    return float(diffs.mean() / sd)


def paired_t_bonferroni(
    comparisons: Sequence[tuple[str, Sequence[float], Sequence[float]]],
    family_size: int,
    alpha: float = 0.05,
) -> list[EffectSizeReport]:
    """Paired t-tests with Bonferroni-adjusted two-sided p-values.

    ``comparisons`` is a list of (label, x, y) with x and y matched by
    rater.  Adjusted p is min(1, p * family_size); significance is judged
    at ``alpha`` on the adjusted value.
    """
    if family_size < 1:
        raise ParameterError("family_size must be at least 1")
    reports = []
    for label, x, y in comparisons:
        d = repeated_measures_d(x, y)
        diffs = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
        n = diffs.size
        t = float(diffs.mean() / (diffs.std(ddof=1) / math.sqrt(n)))
        p_raw = float(2.0 * stats.t.sf(abs(t), n - 1))
        p_adj = min(1.0, p_raw * family_size)
        reports.append(
            EffectSizeReport(
                label=label,
                d=d,
                t=t,
                p_raw=p_raw,
                p_adjusted=p_adj,
                significant=p_adj < alpha,
                n_pairs=n,
            )
        )
    return reports


# -- CSV formats ------------------------------------------------------------------------

RATINGS_HEADER = ["rater_id", "clip_id", "variant_id", "rating", "scale"]
APC_HEADER = ["rater_id", "variant_id", "clip_id", "level", "choice"]
SCORES_HEADER = ["rater_id", "score"]


@dataclass(frozen=True)
class ApcResponseRow:
    rater_id: str
    variant_id: str
    clip_id: str
    level: int
    prefer_reference: bool


def load_ratings_csv(path: Path | str) -> list[RatingRecord]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if list(reader.fieldnames or []) != RATINGS_HEADER:
            raise IngestError(f"{path}: expected header {','.join(RATINGS_HEADER)}")
        for i, row in enumerate(reader, start=2):
            try:
                out.append(
                    RatingRecord(
                        rater_id=row["rater_id"],
                        clip_id=row["clip_id"],
                        variant_id=row["variant_id"],
                        rating=int(row["rating"]),
                        scale=row["scale"],
                    )
                )
            except (ValueError, ParameterError) as exc:
                raise IngestError(f"{path}: bad rating row {i}: {exc}", rows=[i]) from exc
    return out


_CHOICE_TOKENS = {
    "reference": True,
    "prefer_reference": True,
    "standard": False,
    "prefer_standard": False,
}


def load_apc_csv(path: Path | str) -> list[ApcResponseRow]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if list(reader.fieldnames or []) != APC_HEADER:
            raise IngestError(f"{path}: expected header {','.join(APC_HEADER)}")
        for i, row in enumerate(reader, start=2):
            token = row["choice"].strip().lower()
            if token not in _CHOICE_TOKENS:
                raise IngestError(
                    f"{path}: bad choice {row['choice']!r} at row {i} "
                    f"(use 'reference' or 'standard')",
                    rows=[i],
                )
            try:
                out.append(
                    ApcResponseRow(
                        rater_id=row["rater_id"],
                        variant_id=row["variant_id"],
                        clip_id=row["clip_id"],
                        level=int(row["level"]),
                        prefer_reference=_CHOICE_TOKENS[token],
                    )
                )
            except ValueError as exc:
                raise IngestError(f"{path}: bad APC row {i}: {exc}", rows=[i]) from exc
    return out


def proportions_from_rows(rows: Sequence[ApcResponseRow]) -> ProportionData:
    """Collapse raw APC responses to per-level counts."""
    shown: dict[int, int] = {}
    pref: dict[int, int] = {}
    for r in rows:
        shown[r.level] = shown.get(r.level, 0) + 1
        pref[r.level] = pref.get(r.level, 0) + (1 if r.prefer_reference else 0)
    levels = sorted(shown)
    return ProportionData(
        levels=np.array(levels, dtype=float),
        n_shown=np.array([shown[l] for l in levels]),
        n_prefer_reference=np.array([pref[l] for l in levels]),
    )


def load_scores_csv(path: Path | str) -> dict[str, float]:
    out: dict[str, float] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if list(reader.fieldnames or []) != SCORES_HEADER:
            raise IngestError(f"{path}: expected header {','.join(SCORES_HEADER)}")
        for i, row in enumerate(reader, start=2):
            try:
                out[row["rater_id"]] = float(row["score"])
            except ValueError as exc:
                raise IngestError(f"{path}: bad score row {i}: {exc}", rows=[i]) from exc
    return out
