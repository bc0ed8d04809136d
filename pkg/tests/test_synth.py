"""Generator contracts: determinism, calibration, shock locality, thinning."""

import math

import numpy as np
import pandas as pd
import pytest

from cdrscore.synth import CalibrationError, SynthConfig, generate, plant_shock, thin


def small(seed=0, **kw):
    base = dict(n_subscribers=60, span_days=56, seed=seed)
    base.update(kw)
    return SynthConfig(**base)


class TestGenerate:
    def test_byte_identical_reruns(self, tmp_path):
        a = generate(small(seed=5))
        b = generate(small(seed=5))
        da, db = tmp_path / "a", tmp_path / "b"
        a.write(da)
        b.write(db)
        for name in ("events.csv", "loans.csv", "groundtruth.csv"):
            assert (da / name).read_bytes() == (db / name).read_bytes()

    def test_different_seed_changes_output(self):
        a = generate(small(seed=1))
        b = generate(small(seed=2))
        assert not a.events.equals(b.events)

    def test_realized_rate_concentrates(self):
        res = generate(small(n_subscribers=5000, seed=3, target_default_rate=0.11))
        p = 0.11
        bound = 3 * math.sqrt(p * (1 - p) / 5000)
        assert abs(res.realized_default_rate - p) < bound + 0.002

    def test_no_signal_theta_independent_of_default(self):
        res = generate(
            small(n_subscribers=4000, seed=4, signal_strength=0.0,
                  target_default_rate=0.3)
        )
        theta = res.truth["theta"].to_numpy()
        d = res.loans["default"].to_numpy().astype(float)
        r = np.corrcoef(theta, d)[0, 1]
        assert abs(r) < 3 / math.sqrt(4000) + 0.02

    def test_signal_strength_links_theta_to_default(self):
        res = generate(
            small(n_subscribers=4000, seed=5, signal_strength=2.0,
                  target_default_rate=0.3)
        )
        theta = res.truth["theta"].to_numpy()
        d = res.loans["default"].to_numpy().astype(float)
        assert np.corrcoef(theta, d)[0, 1] > 0.2

    def test_events_parse_through_ingest(self, tmp_path):
        res = generate(small(seed=6))
        paths = res.write(tmp_path)
        from cdrscore.events import CalendarConfig, clip_to_loan, ingest_events, ingest_loans

        store = ingest_events(paths["events"], res.window, CalendarConfig())
        loans = ingest_loans(paths["loans"])
        assert store.report.rows_skipped == 0
        clipped = clip_to_loan(store, loans)
        assert len(clipped) > 0
        assert loans.covariate_names == ["bureau_score", "bureau_entities"]

    def test_infeasible_rate_rejected(self):
        with pytest.raises((CalibrationError, ValueError)):
            SynthConfig(n_subscribers=60, target_default_rate=0.0)

    def test_loan_dates_within_window(self):
        cfg = small(seed=7, loan_window=(0.5, 1.0))
        res = generate(cfg)
        days = (
            pd.to_datetime(res.loans["loan_date"]).dt.dayofyear
            - pd.Timestamp("2016-01-04").dayofyear
        )
        assert days.min() >= 0.5 * cfg.span_days - 1
        assert days.max() <= cfg.span_days


class TestPlantShock:
    def test_zero_magnitude_is_noop(self, tmp_path):
        base = small(seed=8)
        shocked = plant_shock(base, weeks=[1, 2], magnitude=0.0)
        a = generate(base)
        b = generate(shocked)
        da, db = tmp_path / "a", tmp_path / "b"
        a.write(da)
        b.write(db)
        for name in ("events.csv", "loans.csv", "groundtruth.csv"):
            assert (da / name).read_bytes() == (db / name).read_bytes()

    def test_shock_raises_default_rate_in_weeks(self):
        base = small(
            n_subscribers=4000, seed=9, span_days=56, loan_window=(0.25, 1.0),
            target_default_rate=0.2,
        )
        shocked = plant_shock(base, weeks=[2, 3], magnitude=1.5)
        res = generate(shocked)
        loan_week = (
            (pd.to_datetime(res.loans["loan_date"]).astype("int64")
             - pd.Timestamp("2016-01-04").value)
            // (86400 * 7 * 10**9)
        )
        d = res.loans["default"].to_numpy()
        in_shock = loan_week.isin([2, 3]).to_numpy()
        assert d[in_shock].mean() > d[~in_shock].mean() + 0.1

    def test_shock_shifts_behavior_stream(self):
        base = small(n_subscribers=300, seed=10, span_days=56)
        shocked = plant_shock(base, weeks=[2], magnitude=1.0)
        shocked = type(shocked).from_dict(
            dict(shocked.to_dict(), shock_behavior_coupling=0.7)
        )
        a = generate(base)
        b = generate(shocked)

        def sms_in_week(events, week):
            ts = pd.to_datetime(events["timestamp"])
            days = (ts - pd.Timestamp("2016-01-04", tz="UTC")).dt.days
            mask = (events["event_type"] == "SMS_OUT") & (days // 7 == week)
            return int(mask.sum())

        assert sms_in_week(b.events, 2) > 1.5 * sms_in_week(a.events, 2)
        assert sms_in_week(b.events, 1) == sms_in_week(a.events, 1)

    def test_week_outside_span_rejected(self):
        with pytest.raises(ValueError):
            plant_shock(small(), weeks=[99], magnitude=1.0)


class TestThin:
    def test_rate_zero_identity(self):
        res = generate(small(seed=11))
        out = thin(res.events, 0.0, seed=11)
        pd.testing.assert_frame_equal(out, res.events.reset_index(drop=True))

    def test_binomial_concentration(self):
        res = generate(small(n_subscribers=400, seed=12))
        n = len(res.events)
        out = thin(res.events, 0.5, seed=12)
        sd = math.sqrt(n * 0.25)
        assert abs(len(out) - 0.5 * n) < 4 * sd

    def test_deterministic(self):
        res = generate(small(seed=13))
        a = thin(res.events, 0.3, seed=1)
        b = thin(res.events, 0.3, seed=1)
        pd.testing.assert_frame_equal(a, b)

    def test_bad_rate_rejected(self):
        res = generate(small(seed=14))
        with pytest.raises(ValueError):
            thin(res.events, 1.0, seed=0)


class TestPeriodicityRecovery:
    def test_amplitude_strengthens_weekly_signature(self, tmp_path):
        """featurize(generate(a > 0)) shows a stronger top-frequency ratio
        than a = 0, on paired seeds."""
        from cdrscore.events import CalendarConfig, clip_to_loan, ingest_events, ingest_loans
        from cdrscore.features import assemble_matrix
        from cdrscore.taxonomy import TaxonomyConfig

        tax = TaxonomyConfig(
            streams=("Calls.Out",),
            buckets=("Day",),
            time_variants=("",),
            include_nonzero=False,
            pair_streams=(),
            categorical_characteristics=(),
            binary_fractions=(),
            contacts_streams=(),
            include_geo=False,
        )
        col = "Calls.Out.Day.Periodicity.MagnitudeRatio.Rank0_AllOtherRanks"
        means = {}
        for label, amp in (("flat", 0.0), ("weekly", 0.6)):
            vals = []
            for seed in range(4):
                cfg = small(
                    n_subscribers=40, span_days=56, seed=100 + seed,
                    weekly_amplitude=amp, calls_out_rate=8.0,
                )
                res = generate(cfg)
                d = tmp_path / f"{label}{seed}"
                paths = res.write(d)
                store = ingest_events(paths["events"], res.window, CalendarConfig())
                loans = ingest_loans(paths["loans"])
                fm = assemble_matrix(tax, clip_to_loan(store, loans), loans,
                                     drop_constant=False)
                vals.append(float(fm.frame[col].mean()))
            means[label] = float(np.mean(vals))
        assert means["weekly"] > means["flat"]
