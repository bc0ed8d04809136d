"""Statistic-level contracts: frozen spec examples plus brute-force oracles."""

import math

import numpy as np
import pytest

import oracles
from cdrscore.features import (
    great_circle_km,
    stat_autocorr,
    stat_categorical,
    stat_central_dispersion,
    stat_contacts,
    stat_geo,
    stat_pairs,
    stat_periodicity,
    stat_slope,
    stat_workday_holiday,
)
from cdrscore.aggregate import LocationSet

REL = 1e-9


def close(a, b):
    assert a is not None and b is not None, (a, b)
    assert a == pytest.approx(b, rel=REL, abs=1e-12), (a, b)


class TestCentralDispersion:
    def test_frozen_example(self):
        # expected values computed with the interpolated-quantile oracle
        out = stat_central_dispersion([2, 4, 6])
        close(out["Mean"], 4.0)
        close(out["Median"], 4.0)
        close(out["SD"], 2.0)
        close(out["Q80minusQ50"], oracles.quantile([2, 4, 6], 80) - 4.0)
        assert out["Q80minusQ50"] == pytest.approx(1.2, rel=REL)

    def test_single_point(self):
        out = stat_central_dispersion([5])
        close(out["Mean"], 5.0)
        assert out["SD"] is None
        assert out["Mean.SD"] is None

    def test_zero_dispersion(self):
        out = stat_central_dispersion([3, 3, 3])
        assert out["SD"] == 0.0
        assert out["Mean.SD"] is None

    def test_oracle_random_series(self):
        rng = np.random.default_rng(42)
        for _ in range(50):
            xs = rng.integers(0, 8, size=rng.integers(1, 11)).astype(float).tolist()
            out = stat_central_dispersion(xs)
            close(out["Mean"], oracles.mean(xs))
            close(out["Median"], oracles.quantile(xs, 50))
            close(out["Max"], max(xs))
            close(out["Min"], min(xs))
            for p in (20, 40, 50, 60, 80):
                close(out[f"Q{p}"], oracles.quantile(xs, p))
            sd = oracles.sample_sd(xs)
            if sd is None:
                assert out["SD"] is None
            else:
                assert out["SD"] == pytest.approx(sd, rel=REL, abs=1e-12)
            if sd and sd > 0:
                close(out["Mean.SD"], oracles.mean(xs) / sd)

    def test_quantile_monotonicity(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            xs = rng.normal(size=rng.integers(1, 12))
            out = stat_central_dispersion(xs)
            qs = [out[f"Q{p}"] for p in (20, 40, 50, 60, 80)]
            assert all(a <= b + 1e-12 for a, b in zip(qs, qs[1:]))
            for a, b in ((80, 50), (50, 20), (60, 40)):
                assert out[f"Q{a}minusQ{b}"] >= -1e-12


class TestSlope:
    def test_exact_linear(self):
        close(stat_slope([2, 4, 6]), 2.0)

    def test_constant(self):
        close(stat_slope([5, 5, 5, 5]), 0.0)

    def test_frozen_ols(self):
        # closed-form OLS slope oracle
        assert oracles.slope([1, 3, 2]) == pytest.approx(0.5)
        close(stat_slope([1, 3, 2]), 0.5)

    def test_too_short(self):
        assert stat_slope([3.0]) is None

    def test_oracle_random(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            xs = rng.normal(size=rng.integers(2, 11)).tolist()
            close(stat_slope(xs), oracles.slope(xs))


class TestAutocorr:
    def test_weekly_repetition_spearman(self):
        xs = [1, 2, 3, 4, 5, 6, 7] * 4
        close(stat_autocorr(xs, 7, "Spearman"), 1.0)

    def test_constant_missing(self):
        assert stat_autocorr([2.0] * 10, 1, "Pearson") is None
        assert stat_autocorr([2.0] * 10, 2, "Spearman") is None

    def test_alternation(self):
        close(stat_autocorr([1, 2, 1, 2, 1, 2], 1, "Pearson"), -1.0)

    def test_short_series_missing(self):
        assert stat_autocorr([1, 2, 3, 4], 2, "Pearson") is None  # needs >= 5

    def test_oracle_random(self):
        rng = np.random.default_rng(11)
        for _ in range(60):
            n = int(rng.integers(4, 11))
            xs = rng.integers(0, 5, size=n).astype(float).tolist()
            for lag in (1, 2):
                for method in ("Pearson", "Spearman"):
                    got = stat_autocorr(xs, lag, method)
                    want = oracles.autocorr(xs, lag, method)
                    if want is None:
                        assert got is None
                    else:
                        assert got == pytest.approx(want, rel=REL, abs=1e-12)
                    if got is not None:
                        assert -1.0 <= got <= 1.0


class TestPeriodicity:
    def test_constant_all_missing(self):
        out = stat_periodicity([4.0] * 10)
        assert all(v is None for v in out.values())

    def test_pure_weekly_tone(self):
        # daily series, exact period-7 component on a 28-day window
        xs = [10 + 3 * math.cos(2 * math.pi * 4 * t / 28) for t in range(28)]
        out = stat_periodicity(xs)
        want = oracles.periodicity(xs)
        assert out["Periodicity.Magnitude.Rank0"] == pytest.approx(
            want["Periodicity.Magnitude.Rank0"], rel=1e-9
        )
        assert out["Periodicity.Magnitude.Rank0"] == pytest.approx(42.0, rel=1e-9)
        # all remaining mass is float noise: ratio is huge (or missing), and
        # the weekly bin IS the top bin so both ratios agree
        r0 = out["Periodicity.MagnitudeRatio.Rank0_AllOtherRanks"]
        wk = out["Periodicity.MagnitudeRatio.Weekly_AllOtherRanks"]
        if r0 is not None:
            assert r0 > 1e6
            assert wk == pytest.approx(r0, rel=1e-12)

    def test_equal_amplitude_components(self):
        xs = [
            math.cos(2 * math.pi * 4 * t / 28) + math.cos(2 * math.pi * 2 * t / 28)
            for t in range(28)
        ]
        out = stat_periodicity(xs)
        assert abs(out["Periodicity.MagnitudeDifference.Rank0_Rank1"]) < 1e-9 * (
            out["Periodicity.Magnitude.Rank0"]
        )

    def test_too_short(self):
        out = stat_periodicity([1, 5, 2, 4, 1, 5, 3])
        assert all(v is None for v in out.values())

    def test_oracle_random(self):
        rng = np.random.default_rng(19)
        for _ in range(30):
            n = int(rng.integers(8, 16))
            xs = rng.integers(0, 6, size=n).astype(float).tolist()
            got = stat_periodicity(xs)
            want = oracles.periodicity(xs)
            for key, w in want.items():
                g = got[key]
                if w is None:
                    assert g is None, key
                else:
                    assert g == pytest.approx(w, rel=1e-9, abs=1e-9), key


class TestCategorical:
    def test_symmetric_split(self):
        out = stat_categorical([("a", 1), ("b", 1), ("c", 1), ("d", 1)])
        close(out["HHI"], 0.25)

    def test_single_category(self):
        out = stat_categorical([("a", 7)])
        close(out["HHI"], 1.0)
        close(out["Fraction.a"], 1.0)

    def test_frozen_three_one(self):
        out = stat_categorical([("a", 3), ("b", 1)])
        close(out["Fraction.a"], 0.75)
        close(out["Fraction.b"], 0.25)
        close(out["HHI"], oracles.hhi([3, 1]))
        assert out["HHI"] == pytest.approx(0.625, rel=REL)

    def test_zero_total(self):
        out = stat_categorical([("a", 0)])
        assert out["HHI"] is None and out["Fraction.a"] is None


class TestContacts:
    def test_frozen_example(self):
        out = stat_contacts(["A", "A", "B"], ["A"])
        want = oracles.contacts(["A", "A", "B"], ["A"])
        close(out["Degree"], 2.0)
        close(out["TopContactShare"], want["TopContactShare"])
        assert out["TopContactShare"] == pytest.approx(2 / 3, rel=REL)
        close(out["Returned.Fraction"], 0.5)

    def test_no_outgoing(self):
        out = stat_contacts([], ["A"])
        assert all(v is None for v in out.values())

    def test_full_reciprocation(self):
        out = stat_contacts(["A"], ["A"])
        close(out["Returned.Fraction"], 1.0)


class TestWorkdayHoliday:
    def test_frozen_duration_fraction(self):
        out = stat_workday_holiday([90.0, 30.0], [True, False], [False, False])
        close(out["WorkDay.Fraction"], 0.75)

    def test_all_holiday(self):
        out = stat_workday_holiday([5.0, 2.0], [False, False], [True, True])
        close(out["Holiday.Fraction"], 1.0)
        close(out["WorkDay.Fraction"], 0.0)

    def test_zero_total(self):
        out = stat_workday_holiday([], [], [])
        assert out["WorkDay.Fraction"] is None


class TestGeo:
    def test_single_tower(self):
        locs = LocationSet("s", [(10.0, 20.0, 3, 5)])
        out = stat_geo(locs, [], observed_days=30)
        assert out["MaxPairwiseDistance"] is None
        close(out["RadiusFromCentroid"], 0.0)
        close(out["TowerCount"], 1.0)

    def test_equator_degree(self):
        locs = LocationSet("s", [(0.0, 0.0, 1, 1), (0.0, 1.0, 1, 1)])
        out = stat_geo(locs, [], observed_days=10)
        want = oracles.great_circle_law_of_cosines(0.0, 0.0, 0.0, 1.0)
        assert out["MaxPairwiseDistance"] == pytest.approx(want, rel=1e-9)
        assert out["MaxPairwiseDistance"] == pytest.approx(111.19, abs=0.01)

    def test_cluster_of_two_close_towers(self):
        locs = LocationSet("s", [(0.0, 0.0, 10, 20), (0.0, 0.0045, 10, 20)])
        out = stat_geo(locs, [], observed_days=100)  # ~0.5 km apart
        min_days = max(2, math.ceil(0.05 * 100))
        want = oracles.single_linkage_count(
            [(0.0, 0.0), (0.0, 0.0045)], 1.0, min_days, [10, 10]
        )
        assert out["ImportantPlaces.DaysUsed.Number"] == pytest.approx(float(want))
        assert out["ImportantPlaces.DaysUsed.Number"] == 1.0

    def test_no_towers(self):
        out = stat_geo(None, [("poi", 0.0, 0.0)], observed_days=10)
        assert all(v is None for v in out.values())

    def test_poi_distance_from_centroid(self):
        locs = LocationSet("s", [(0.0, 0.0, 1, 1), (0.0, 2.0, 1, 3)])
        out = stat_geo(locs, [("cap", 0.0, 3.0)], observed_days=10)
        # event-count-weighted centroid: lon = (0*1 + 2*3)/4 = 1.5
        want = oracles.great_circle_law_of_cosines(0.0, 1.5, 0.0, 3.0)
        assert out["DistanceToPOI.cap"] == pytest.approx(want, rel=1e-9)

    def test_haversine_matches_law_of_cosines(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            lat1, lat2 = rng.uniform(-80, 80, 2)
            lon1, lon2 = rng.uniform(-179, 179, 2)
            got = float(great_circle_km(lat1, lon1, lat2, lon2))
            want = oracles.great_circle_law_of_cosines(lat1, lon1, lat2, lon2)
            assert got == pytest.approx(want, rel=1e-6, abs=1e-6)


class TestPairs:
    def test_proportional(self):
        out = stat_pairs([1, 2, 3], [2, 4, 6])
        close(out["L0L0.Correlation.Pearson"], 1.0)

    def test_lagged_copy(self):
        a = [0, 1, 2, 3, 4, 9]
        b = [1, 2, 3, 4, 9, 0]  # a shifted: a[t] == b[t-1]
        out = stat_pairs(a, b)
        close(out["L0L1.Correlation.Pearson"], 1.0)

    def test_zero_denominator_ratio(self):
        out = stat_pairs([1, 2, 7], [0, 0, 0])
        assert out["Ratio"] is None

    def test_ratio_value(self):
        out = stat_pairs([1, 2, 3], [2, 2, 2])
        close(out["Ratio"], 1.0)

    def test_oracle_random(self):
        rng = np.random.default_rng(23)
        for _ in range(40):
            n = int(rng.integers(3, 11))
            a = rng.integers(0, 5, size=n).astype(float).tolist()
            b = rng.integers(0, 5, size=n).astype(float).tolist()
            out = stat_pairs(a, b, lags=(0, 1))
            for lag in (0, 1):
                asl, bsl = a[lag:], b[: n - lag]
                want_p = oracles.pearson(asl, bsl) if len(asl) >= 3 else None
                want_s = oracles.spearman(asl, bsl) if len(asl) >= 3 else None
                got_p = out[f"L0L{lag}.Correlation.Pearson"]
                got_s = out[f"L0L{lag}.Correlation.Spearman"]
                for got, want in ((got_p, want_p), (got_s, want_s)):
                    if want is None:
                        assert got is None
                    else:
                        assert got == pytest.approx(want, rel=REL, abs=1e-12)
