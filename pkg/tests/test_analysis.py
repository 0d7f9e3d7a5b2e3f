import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from apc.analysis import (
    ApcResponseRow,
    EffectSizeReport,
    ProportionData,
    RatingRecord,
    dsmos_differential,
    dsmos_scores,
    fit_logistic_curve,
    fit_logistic_nls,
    load_apc_csv,
    load_ratings_csv,
    load_scores_csv,
    mos_aggregate,
    paired_t_bonferroni,
    proportions_from_rows,
    pse,
    repeated_measures_d,
    screen_apc_fit,
    screen_rater,
)
from apc.errors import (
    InsufficientDataError,
    NoEstimateError,
    PairingError,
    ParameterError,
    UndefinedEffectError,
)
from apc.psychometric import FourParamLogistic, eval_four_param


def noise_free_fit(midpoint=22.0, slope=3.0, lower=0.05, upper=0.95, step=4):
    true = FourParamLogistic(midpoint=midpoint, slope=slope, lower=lower, upper=upper)
    levels = np.arange(1, 51, step, dtype=float)
    p = eval_four_param(true, levels)
    return true, fit_logistic_curve(levels, p, np.full(levels.size, 20.0))


class TestFitLogisticNls:
    def test_noise_free_recovery(self):
        true, result = noise_free_fit()
        assert result.converged
        assert result.params.midpoint == pytest.approx(true.midpoint, abs=1e-4)

    def test_flat_data_is_non_discriminative(self):
        levels = np.arange(1, 41, 4, dtype=float)
        data = ProportionData(
            levels=levels,
            n_shown=np.full(levels.size, 10),
            n_prefer_reference=np.full(levels.size, 5),
        )
        result = fit_logistic_nls(data)
        assert (not result.converged) or (result.params.upper - result.params.lower) < 0.25
        verdict = screen_apc_fit(result)
        assert not verdict.include

    def test_insufficient_levels(self):
        data = ProportionData(
            levels=np.array([10.0, 20.0, 30.0]),
            n_shown=np.array([5, 5, 5]),
            n_prefer_reference=np.array([0, 2, 5]),
        )
        with pytest.raises(InsufficientDataError):
            fit_logistic_nls(data)

    def test_apc_regime_monte_carlo(self):
        # 1 observation per visited level, 30 levels, 200 synthetic raters
        rng = np.random.default_rng(42)
        true = FourParamLogistic(midpoint=25.0, slope=2.5, lower=0.02, upper=0.98)
        errors = []
        for _ in range(200):
            levels = rng.choice(np.arange(1, 51), size=30, replace=False).astype(float)
            p = eval_four_param(true, levels)
            responses = (rng.random(30) < p).astype(int)
            data = ProportionData(
                levels=levels,
                n_shown=np.ones(30, dtype=int),
                n_prefer_reference=responses,
            )
            result = fit_logistic_nls(data)
            errors.append(
                abs(result.params.midpoint - 25.0) if result.converged else np.inf
            )
        assert np.median(errors) <= 3.0

    def test_objective_never_increases_on_accepted_steps(self):
        _, result = noise_free_fit(midpoint=18.0, slope=2.0)
        hist = result.objective_history
        assert all(b <= a + 1e-15 for a, b in zip(hist, hist[1:]))

    def test_midpoint_translation_equivariance(self):
        true = FourParamLogistic(midpoint=22.0, slope=3.0, lower=0.05, upper=0.95)
        levels = np.arange(1, 51, 4, dtype=float)
        p = eval_four_param(true, levels)
        base = fit_logistic_curve(levels, p, np.full(levels.size, 10.0))
        shifted = fit_logistic_curve(levels + 7.0, p, np.full(levels.size, 10.0))
        assert shifted.params.midpoint - base.params.midpoint == pytest.approx(7.0, abs=1e-6)

    def test_weighting_by_n_shown(self):
        # a high-count level must pull the fit harder than a low-count one
        levels = np.array([10.0, 18.0, 26.0, 34.0, 42.0])
        data_hi = ProportionData(
            levels=levels,
            n_shown=np.array([1, 1, 100, 1, 1]),
            n_prefer_reference=np.array([0, 0, 30, 1, 1]),
        )
        data_lo = ProportionData(
            levels=levels,
            n_shown=np.array([1, 1, 1, 1, 1]),
            n_prefer_reference=np.array([0, 0, 0, 1, 1]),
        )
        fit_hi = fit_logistic_nls(data_hi)
        r_hi = eval_four_param(fit_hi.params, 26.0)
        assert abs(r_hi - 0.3) < abs(eval_four_param(fit_logistic_nls(data_lo).params, 26.0) - 0.3)


class TestPse:
    def test_accessor(self):
        _, result = noise_free_fit(midpoint=22.0)
        assert pse(result) == result.params.midpoint

    def test_unconverged_has_no_estimate(self):
        _, result = noise_free_fit()
        result.converged = False
        with pytest.raises(NoEstimateError):
            pse(result)

    def test_recovery_preserves_ordering(self):
        _, fit20 = noise_free_fit(midpoint=20.0)
        _, fit30 = noise_free_fit(midpoint=30.0)
        assert pse(fit20) < pse(fit30)

    def test_out_of_scale_midpoint_flagged(self):
        # proportions still rising at the top of the scale extrapolate beyond it
        true = FourParamLogistic(midpoint=63.0, slope=6.0, lower=0.02, upper=0.98)
        levels = np.arange(1, 51, 2, dtype=float)
        p = eval_four_param(true, levels)
        result = fit_logistic_curve(levels, p, np.full(levels.size, 30.0))
        verdict = screen_apc_fit(result, scale_min=1, scale_max=50)
        assert not verdict.include
        assert "outside scale" in verdict.reason


class TestScreenRater:
    def _ratings(self, counts):
        out = []
        i = 0
        for rating, n in counts.items():
            for _ in range(n):
                out.append(RatingRecord(rater_id="r", clip_id=f"c{i}", variant_id="v",
                                        rating=rating))
                i += 1
        return out

    def test_ninety_six_percent_excluded(self):
        verdict = screen_rater(self._ratings({5: 96, 3: 4}))
        assert not verdict.include

    def test_ninety_five_percent_included(self):
        verdict = screen_rater(self._ratings({5: 95, 3: 5}))
        assert verdict.include

    def test_uniform_ratings_included(self):
        verdict = screen_rater(self._ratings({1: 20, 2: 20, 3: 20, 4: 20, 5: 20}))
        assert verdict.include


class TestDsmos:
    def test_equal_ratings_give_five(self):
        for r in range(1, 6):
            assert dsmos_differential(r, r) == 5.0

    def test_arithmetic(self):
        assert dsmos_differential(4, 4) == 5.0
        assert dsmos_differential(2, 5) == 2.0

    def test_clamping(self):
        assert dsmos_differential(5, 3) == 5.0
        assert dsmos_differential(1, 5) == 1.0

    def test_rating_domain(self):
        with pytest.raises(ParameterError):
            dsmos_differential(0, 3)

    def test_pairing_from_records(self):
        records = [
            RatingRecord("r1", "c1", "hidden-reference", 5, "DS-MOS"),
            RatingRecord("r1", "c1", "v360", 3, "DS-MOS"),
        ]
        scores = dsmos_scores(records)
        assert scores[("r1", "v360", "c1")] == 3.0

    def test_missing_reference_raises(self):
        records = [RatingRecord("r1", "c1", "v360", 3, "DS-MOS")]
        with pytest.raises(PairingError):
            dsmos_scores(records)


class TestMosAggregate:
    def test_constant_ratings(self):
        summary = mos_aggregate({"a": [3, 3], "b": [3], "c": [3, 3, 3]})
        assert summary.mean == 3.0
        assert summary.ci_lower == summary.ci_upper == 3.0

    def test_two_rater_t_interval(self):
        summary = mos_aggregate({"a": [2], "b": [4]})
        assert summary.mean == pytest.approx(3.0)
        assert summary.ci_upper - summary.mean == pytest.approx(12.706204736, abs=1e-6)

    def test_single_rater_rejected(self):
        with pytest.raises(InsufficientDataError):
            mos_aggregate({"a": [3, 4]})

    def test_coverage_monte_carlo(self):
        rng = np.random.default_rng(6)
        covered = 0
        reps = 500
        for _ in range(reps):
            ratings = np.clip(np.round(rng.normal(3.5, 0.5, size=1000)), 1, 5)
            summary = mos_aggregate({f"r{i}": [ratings[i]] for i in range(1000)})
            if summary.ci_lower <= 3.5 <= summary.ci_upper:
                covered += 1
        assert 0.92 <= covered / reps <= 0.98


class TestEffectSizes:
    def test_hand_computed_d(self):
        assert repeated_measures_d([3, 4, 5], [1, 3, 2]) == pytest.approx(2.0)

    def test_degenerate_cases(self):
        with pytest.raises(UndefinedEffectError):
            repeated_measures_d([1, 2, 3], [1, 2, 3])
        with pytest.raises(UndefinedEffectError):
            repeated_measures_d([3, 4, 5], [1, 2, 3])  # constant difference

    @given(
        st.lists(st.floats(-10, 10), min_size=2, max_size=30),
        st.integers(0, 10_000),
    )
    def test_antisymmetry(self, xs, seed):
        rng = np.random.default_rng(seed)
        ys = list(np.asarray(xs) + rng.normal(0, 1, len(xs)))
        try:
            d_xy = repeated_measures_d(xs, ys)
        except UndefinedEffectError:
            return
        assert repeated_measures_d(ys, xs) == pytest.approx(-d_xy)

    def test_paired_t_hand_example(self):
        reports = paired_t_bonferroni([("demo", [3, 4, 5], [1, 3, 2])], family_size=3)
        r = reports[0]
        assert r.t == pytest.approx(3.4641, abs=1e-4)
        assert r.p_raw == pytest.approx(0.0742, abs=1e-4)
        # adjusted p is exactly min(1, 3 * raw); the t CDF oracle puts it at 0.22254
        assert r.p_adjusted == pytest.approx(min(1.0, 3 * r.p_raw))
        assert r.p_adjusted == pytest.approx(2 * 3 * stats.t.sf(r.t, 2))
        assert not r.significant
        assert r.d == pytest.approx(2.0)

    def test_family_of_one_keeps_raw_p(self):
        reports = paired_t_bonferroni([("x", [3, 4, 5], [1, 3, 2])], family_size=1)
        assert reports[0].p_adjusted == pytest.approx(reports[0].p_raw)

    def test_null_calibration(self):
        rng = np.random.default_rng(11)
        false_positives = 0
        reps = 500
        for _ in range(reps):
            base = rng.normal(3.0, 1.0, size=20)
            x = base + rng.normal(0, 0.5, size=20)
            y = base + rng.normal(0, 0.5, size=20)
            reports = paired_t_bonferroni([("null", x, y)], family_size=3)
            false_positives += reports[0].significant
        assert false_positives / reps <= 0.05

    def test_apc_style_precision_grows_d(self):
        # lower per-rater variance must produce the larger d for the same
        # true difference: a formula self-consistency check
        rng = np.random.default_rng(12)
        n = 24
        true_gap = 1.0
        precise_x = 3.0 + true_gap + rng.normal(0, 0.3, n)
        precise_y = 3.0 + rng.normal(0, 0.3, n)
        noisy_x = 3.0 + true_gap + rng.normal(0, 1.2, n)
        noisy_y = 3.0 + rng.normal(0, 1.2, n)
        assert repeated_measures_d(precise_x, precise_y) > repeated_measures_d(
            noisy_x, noisy_y
        )


class TestCsvIngest:
    def test_ratings_csv(self, tmp_path):
        path = tmp_path / "ratings.csv"
        path.write_text(
            "rater_id,clip_id,variant_id,rating,scale\n"
            "r1,c1,v360,4,MOS\nr1,c2,hidden-reference,5,DS-MOS\n"
        )
        records = load_ratings_csv(path)
        assert len(records) == 2
        assert records[1].variant_id == "hidden-reference"

    def test_apc_csv_and_proportions(self, tmp_path):
        path = tmp_path / "apc.csv"
        path.write_text(
            "rater_id,variant_id,clip_id,level,choice\n"
            "r1,v,c1,30,reference\nr1,v,c2,30,standard\nr1,v,c3,10,standard\n"
        )
        rows = load_apc_csv(path)
        data = proportions_from_rows(rows)
        assert list(data.levels) == [10.0, 30.0]
        assert list(data.n_shown) == [1, 2]
        assert list(data.n_prefer_reference) == [0, 1]

    def test_scores_csv(self, tmp_path):
        path = tmp_path / "scores.csv"
        path.write_text("rater_id,score\nr1,22.5\nr2,31.0\n")
        assert load_scores_csv(path) == {"r1": 22.5, "r2": 31.0}
