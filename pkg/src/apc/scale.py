"""Reference-scale construction and perceptual linearization.

Stage one is objective: given rate-distortion measurements (PSNR at many
CRF settings for several resolutions), pick N logarithmically spaced target
bitrates and, at each, the (resolution, CRF) combination with the highest
interpolated PSNR.  That walks the convex hull of the per-resolution RD
curves and yields a scale whose quality increases monotonically.

Stage two is perceptual: pairwise human judgments between scale levels are
fitted with a Bradley-Terry model (gradient ascent on the logistic pairwise
log-likelihood), the fitted values are checked for linearity, and the scale
is resampled so equal level steps correspond to equal fitted perceptual
steps.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit

from .errors import (
    ConfigError,
    CoverageError,
    DegenerateScaleError,
    IdentifiabilityError,
    IngestError,
    ParameterError,
    UndefinedMetricError,
)

DEFAULT_LEVELS = 50


@dataclass(frozen=True)
class RdPoint:
    resolution: str
    crf: int
    avg_bitrate_kbps: float
    psnr_db: float

    def __post_init__(self):
        if not self.avg_bitrate_kbps > 0:
            raise IngestError(f"bitrate must be positive, got {self.avg_bitrate_kbps}")
        if not math.isfinite(self.psnr_db):
            raise IngestError(f"psnr must be finite, got {self.psnr_db}")


@dataclass(frozen=True)
class ScaleEntry:
    level: int
    resolution: str
    crf: int
    target_bitrate_kbps: float
    psnr_db: float
    perceptual_value: float | None = None


@dataclass(frozen=True)
class ReferenceScale:
    entries: tuple[ScaleEntry, ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        bitrates = [e.target_bitrate_kbps for e in self.entries]
        if any(b2 <= b1 for b1, b2 in zip(bitrates, bitrates[1:])):
            raise ConfigError("scale bitrates must be strictly increasing with level")

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class PairJudgment:
    level_a: int
    level_b: int
    winner: str  # "a" or "b"
    rater_id: str = ""

    def __post_init__(self):
        if self.level_a == self.level_b:
            raise IngestError("a judgment must compare two distinct levels")
        if self.winner not in ("a", "b"):
            raise IngestError(f"winner must be 'a' or 'b', got {self.winner!r}")

    @property
    def winner_level(self) -> int:
        return self.level_a if self.winner == "a" else self.level_b

    @property
    def loser_level(self) -> int:
        return self.level_b if self.winner == "a" else self.level_a


@dataclass(frozen=True)
class PerceptualCurve:
    """Relative perceptual quality per level, gauge-fixed to values[0] = 0."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size < 2:
            raise ConfigError("curve needs at least two values")
        if not np.all(np.isfinite(v)):
            raise ConfigError("curve values must be finite")
        v = v - v[0]
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.size


# -- objective stage ---------------------------------------------------------


def _group_by_resolution(points: Sequence[RdPoint]) -> dict[str, list[tuple[int, RdPoint]]]:
    groups: dict[str, list[tuple[int, RdPoint]]] = {}
    for idx, p in enumerate(points):
        groups.setdefault(p.resolution, []).append((idx, p))
    return groups


def validate_rd(points: Sequence[RdPoint]) -> None:
    """Reject RD tables where bitrate fails to fall strictly as CRF rises."""
    bad_rows: list[int] = []
    for _, rows in _group_by_resolution(points).items():
        rows = sorted(rows, key=lambda r: r[1].crf)
        for (_, a), (idx_b, b) in zip(rows, rows[1:]):
            if b.avg_bitrate_kbps >= a.avg_bitrate_kbps:
                bad_rows.append(idx_b)
    if bad_rows:
        raise IngestError(
            f"bitrate does not strictly decrease with CRF at rows {sorted(bad_rows)}",
            rows=sorted(bad_rows),
        )


def log_spaced_bitrates(b_min: float, b_max: float, n_levels: int) -> np.ndarray:
    """n_levels log-spaced targets: level k gets b_min * (b_max/b_min)^((k-1)/(n-1))."""
    if not (b_min > 0 and b_max > b_min):
        raise ConfigError("need 0 < b_min < b_max for a log-spaced scale")
    if n_levels < 2:
        raise ConfigError("n_levels must be at least 2")
    return np.exp(np.linspace(math.log(b_min), math.log(b_max), n_levels))


@dataclass(frozen=True)
class _ResolutionCurve:
    resolution: str
    log_bitrates: np.ndarray  # ascending
    psnrs: np.ndarray
    crfs: np.ndarray

    def covers(self, log_b: float) -> bool:
        return self.log_bitrates[0] <= log_b <= self.log_bitrates[-1]

    def psnr_at(self, log_b: float) -> float:
        return float(np.interp(log_b, self.log_bitrates, self.psnrs))

    def nearest_crf(self, log_b: float) -> int:
        return int(self.crfs[np.argmin(np.abs(self.log_bitrates - log_b))])


def _resolution_curves(points: Sequence[RdPoint]) -> list[_ResolutionCurve]:
    curves = []
    for resolution, rows in sorted(_group_by_resolution(points).items()):
        if len(rows) < 2:
            raise IngestError(f"resolution {resolution!r} has fewer than 2 RD points")
        pts = sorted((p for _, p in rows), key=lambda p: p.avg_bitrate_kbps)
        curves.append(
            _ResolutionCurve(
                resolution=resolution,
                log_bitrates=np.log([p.avg_bitrate_kbps for p in pts]),
                psnrs=np.array([p.psnr_db for p in pts]),
                crfs=np.array([p.crf for p in pts]),
            )
        )
    return curves


def _select_on_hull(curves: list[_ResolutionCurve], log_b: float) -> tuple[str, int, float]:
    """Best (resolution, crf, psnr) at one log-bitrate; ties keep the first name."""
    best: tuple[str, int, float] | None = None
    for c in curves:
        if not c.covers(log_b):
            continue
        psnr = c.psnr_at(log_b)
        if best is None or psnr > best[2]:
            best = (c.resolution, c.nearest_crf(log_b), psnr)
    if best is None:
        raise CoverageError(
            f"target bitrate {math.exp(log_b):.3f} kbps is outside every resolution's range"
        )
    return best


def build_initial_scale(points: Sequence[RdPoint], n_levels: int = DEFAULT_LEVELS) -> ReferenceScale:
    """Objective scale: per level, the hull-dominant encoding at its target bitrate."""
    if not points:
        raise IngestError("no RD points supplied")
    validate_rd(points)
    curves = _resolution_curves(points)
    bitrates = [p.avg_bitrate_kbps for p in points]
    targets = log_spaced_bitrates(min(bitrates), max(bitrates), n_levels)
    entries = []
    for k, b in enumerate(targets, start=1):
        resolution, crf, psnr = _select_on_hull(curves, math.log(b))
        entries.append(
            ScaleEntry(
                level=k,
                resolution=resolution,
                crf=crf,
                target_bitrate_kbps=float(b),
                psnr_db=psnr,
            )
        )
    return ReferenceScale(entries=tuple(entries))


# -- perceptual stage ---------------------------------------------------------


def _connected_components(n_levels: int, edges: Iterable[tuple[int, int]]) -> list[list[int]]:
    parent = list(range(n_levels + 1))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    seen: set[int] = set()
    for a, b in edges:
        seen.update((a, b))
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
    comps: dict[int, list[int]] = {}
    for node in sorted(seen):
        comps.setdefault(find(node), []).append(node)
    return list(comps.values())


def fit_pairwise_values(
    judgments: Sequence[PairJudgment],
    n_levels: int,
    l2: float = 1e-3,
    grad_tol: float = 1e-6,
    max_iters: int = 10000,
) -> PerceptualCurve:
    """Bradley-Terry values by gradient ascent on the pairwise log-likelihood.

    Maximizes sum(log sigmoid(v_winner - v_loser)) - l2 * sum(v^2), stopping
    when the gradient max-norm drops below ``grad_tol`` or after
    ``max_iters`` steps.  The returned curve is shifted so v[0] = 0.  Levels
    never mentioned by any judgment keep the regularized value 0.
    """
    if not judgments:
        raise IngestError("no judgments supplied")
    for j in judgments:
        if not (1 <= j.level_a <= n_levels and 1 <= j.level_b <= n_levels):
            raise IngestError(f"judgment references level outside 1..{n_levels}: {j}")
    comps = _connected_components(n_levels, ((j.level_a, j.level_b) for j in judgments))
    if len(comps) > 1:
        raise IdentifiabilityError(
            f"comparison graph splits into {len(comps)} components: {comps}",
            components=comps,
        )

    win = np.array([j.winner_level - 1 for j in judgments])
    lose = np.array([j.loser_level - 1 for j in judgments])
    v = np.zeros(n_levels)

    def objective(vec: np.ndarray) -> float:
        d = vec[win] - vec[lose]
        # log sigmoid(d) = -log1p(exp(-d)), stable for both signs
        return float(-np.logaddexp(0.0, -d).sum() - l2 * vec @ vec)

    def gradient(vec: np.ndarray) -> np.ndarray:
        d = vec[win] - vec[lose]
        s = expit(-d)  # 1 - sigmoid(d)
        g = np.bincount(win, weights=s, minlength=n_levels)
        g -= np.bincount(lose, weights=s, minlength=n_levels)
        return g - 2.0 * l2 * vec

    step = 1.0 / max(len(judgments) / n_levels, 1.0)
    f = objective(v)
    for _ in range(max_iters):
        g = gradient(v)
        if np.max(np.abs(g)) < grad_tol:
            break
        gnorm2 = float(g @ g)
        # backtracking ascent with a growing initial step
        step *= 2.0
        while True:
            f_new = objective(v + step * g)
            if f_new >= f + 0.5 * step * gnorm2 or step < 1e-18:
                break
            step *= 0.5
        v = v + step * g
        f = f_new
    return PerceptualCurve(values=v)


def linearity_nmse(curve: PerceptualCurve) -> float:
    """Standardized mean squared deviation from a straight line.

    Both the curve and the ideal equally spaced line are standardized to
    zero mean and unit variance; the result equals 2*(1 - Pearson r) and
    lies in [0, 4].
    """
    v = curve.values
    if v.size < 3:
        raise ParameterError("need at least 3 levels to measure linearity")
    sd = float(np.std(v))
    if sd == 0.0:
        raise UndefinedMetricError("constant curve: linearity is undefined")
    zv = (v - v.mean()) / sd
    line = np.arange(v.size, dtype=float)
    zl = (line - line.mean()) / np.std(line)
    return float(np.mean((zv - zl) ** 2))


def _pav_nondecreasing(y: np.ndarray) -> np.ndarray:
    """Pool-adjacent-violators isotonic regression with equal weights."""
    vals: list[float] = []
    counts: list[int] = []
    for yi in y:
        vals.append(float(yi))
        counts.append(1)
        while len(vals) > 1 and vals[-2] > vals[-1]:
            merged = (vals[-2] * counts[-2] + vals[-1] * counts[-1]) / (counts[-2] + counts[-1])
            counts[-2] += counts[-1]
            vals[-2] = merged
            vals.pop()
            counts.pop()
    return np.repeat(vals, counts)


@dataclass(frozen=True)
class ResampleResult:
    scale: ReferenceScale
    positions: np.ndarray  # fractional source positions, strictly increasing
    fitted_values: np.ndarray  # isotonic fit of the input curve
    target_values: np.ndarray  # equally spaced values the new levels sit at


def resample_linear(
    scale: ReferenceScale,
    curve: PerceptualCurve,
    rd_points: Sequence[RdPoint] | None = None,
) -> ResampleResult:
    """Resample the scale so fitted perceptual value is linear in level.

    A monotone (isotonic, then piecewise-linear) fit of the curve is
    inverted at equally spaced values, giving fractional source positions.
    Each position's target bitrate is interpolated in log-space; the
    encoding recipe is re-selected on the RD hull when ``rd_points`` is
    given, otherwise taken from the nearest existing scale entry.
    """
    n = len(scale)
    if len(curve) != n:
        raise ConfigError(f"curve has {len(curve)} values but the scale has {n} levels")
    fitted = _pav_nondecreasing(curve.values)
    assert np.all(np.diff(fitted) >= 0.0), "isotonic fit must be nondecreasing"
    if fitted[-1] <= fitted[0]:
        raise DegenerateScaleError("fitted perceptual curve is flat; cannot resample")

    positions_in = np.arange(1.0, n + 1.0)
    # collapse flat runs to single knots (value, mean position) so inversion
    # is well defined; knot values are then strictly increasing
    knot_vals: list[float] = []
    knot_pos: list[float] = []
    i = 0
    while i < n:
        j = i
        while j + 1 < n and fitted[j + 1] == fitted[i]:
            j += 1
        knot_vals.append(float(fitted[i]))
        knot_pos.append(float(positions_in[i : j + 1].mean()))
        i = j + 1

    targets = np.linspace(fitted[0], fitted[-1], n)
    positions = np.interp(targets, knot_vals, knot_pos)
    assert np.all(np.diff(positions) > 0.0), "resampled positions must strictly increase"

    log_bitrates = np.log([e.target_bitrate_kbps for e in scale.entries])
    new_log_b = np.interp(positions, positions_in, log_bitrates)
    curves = _resolution_curves(rd_points) if rd_points is not None else None

    entries = []
    for k, (log_b, t) in enumerate(zip(new_log_b, targets), start=1):
        if curves is not None:
            resolution, crf, psnr = _select_on_hull(curves, float(log_b))
        else:
            nearest = scale.entries[int(np.argmin(np.abs(log_bitrates - log_b)))]
            resolution, crf = nearest.resolution, nearest.crf
            psnr = float(np.interp(log_b, log_bitrates, [e.psnr_db for e in scale.entries]))
        entries.append(
            ScaleEntry(
                level=k,
                resolution=resolution,
                crf=crf,
                target_bitrate_kbps=float(np.exp(log_b)),
                psnr_db=psnr,
                perceptual_value=float(t),
            )
        )
    new_scale = ReferenceScale(entries=tuple(entries))
    return ResampleResult(
        scale=new_scale,
        positions=positions,
        fitted_values=fitted,
        target_values=targets,
    )


# -- CSV formats ---------------------------------------------------------------

RD_HEADER = ["resolution", "crf", "bitrate_kbps", "psnr_db"]
JUDGMENT_HEADER = ["rater_id", "level_a", "level_b", "winner"]
SCALE_HEADER = ["level", "resolution", "crf", "target_bitrate_kbps", "psnr_db", "perceptual_value"]
CURVE_HEADER = ["level", "value"]


def _read_rows(path: Path | str, expected_header: list[str]) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or list(reader.fieldnames) != expected_header:
            raise IngestError(
                f"{path}: expected header {','.join(expected_header)}, "
                f"got {','.join(reader.fieldnames or [])}"
            )
        return list(reader)


def load_rd_csv(path: Path | str) -> list[RdPoint]:
    points = []
    for i, row in enumerate(_read_rows(path, RD_HEADER), start=2):
        try:
            points.append(
                RdPoint(
                    resolution=row["resolution"],
                    crf=int(row["crf"]),
                    avg_bitrate_kbps=float(row["bitrate_kbps"]),
                    psnr_db=float(row["psnr_db"]),
                )
            )
        except (ValueError, IngestError) as exc:
            raise IngestError(f"{path}: bad RD row {i}: {exc}", rows=[i]) from exc
    validate_rd(points)
    return points


def load_judgments_csv(path: Path | str) -> list[PairJudgment]:
    out = []
    for i, row in enumerate(_read_rows(path, JUDGMENT_HEADER), start=2):
        try:
            out.append(
                PairJudgment(
                    rater_id=row["rater_id"],
                    level_a=int(row["level_a"]),
                    level_b=int(row["level_b"]),
                    winner=row["winner"],
                )
            )
        except (ValueError, IngestError) as exc:
            raise IngestError(f"{path}: bad judgment row {i}: {exc}", rows=[i]) from exc
    return out


def save_scale_csv(scale: ReferenceScale, path: Path | str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SCALE_HEADER)
        for e in scale.entries:
            writer.writerow(
                [
                    e.level,
                    e.resolution,
                    e.crf,
                    repr(e.target_bitrate_kbps),
                    repr(e.psnr_db),
                    "" if e.perceptual_value is None else repr(e.perceptual_value),
                ]
            )


def load_scale_csv(path: Path | str) -> ReferenceScale:
    entries = []
    for i, row in enumerate(_read_rows(path, SCALE_HEADER), start=2):
        try:
            entries.append(
                ScaleEntry(
                    level=int(row["level"]),
                    resolution=row["resolution"],
                    crf=int(row["crf"]),
                    target_bitrate_kbps=float(row["target_bitrate_kbps"]),
                    psnr_db=float(row["psnr_db"]),
                    perceptual_value=(
                        None if row["perceptual_value"] == "" else float(row["perceptual_value"])
                    ),
                )
            )
        except ValueError as exc:
            raise IngestError(f"{path}: bad scale row {i}: {exc}", rows=[i]) from exc
    return ReferenceScale(entries=tuple(entries))


def save_curve_csv(curve: PerceptualCurve, path: Path | str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CURVE_HEADER)
        for level, value in enumerate(curve.values, start=1):
            writer.writerow([level, repr(float(value))])


def load_curve_csv(path: Path | str) -> PerceptualCurve:
    rows = _read_rows(path, CURVE_HEADER)
    if not rows:
        raise IngestError(f"{path}: empty curve file")
    values = np.full(len(rows), np.nan)
    for i, row in enumerate(rows, start=2):
        try:
            level = int(row["level"])
            values[level - 1] = float(row["value"])
        except (ValueError, IndexError) as exc:
            raise IngestError(f"{path}: bad curve row {i}: {exc}", rows=[i]) from exc
    if np.any(np.isnan(values)):
        raise IngestError(f"{path}: curve levels must cover 1..{len(rows)} exactly once")
    return PerceptualCurve(values=values)
