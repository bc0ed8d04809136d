"""Week merging, OLS fixed effects, weekly forest ensemble, artifacts."""

import json

import numpy as np
import pandas as pd
import pytest

import oracles
from cdrscore.learn import (
    ForestSpec,
    ModelArtifact,
    TrainConfig,
    fit_ols_fe,
    fit_rf_weekly,
    merge_weeks,
    predict,
    train,
    week_index,
)


def expand(counts):
    out = []
    for week, c in enumerate(counts):
        out += [week] * c
    return np.array(out)


class TestMergeWeeks:
    def test_frozen_example(self):
        mapping = merge_weeks(expand([60, 10, 55]), 50)
        want, sizes = oracles.merge_weeks_by_hand([60, 10, 55], 50)
        assert mapping == want
        assert mapping == {0: 0, 1: 0, 2: 1}
        assert sizes == [70, 55]

    def test_identity_when_all_meet_minimum(self):
        mapping = merge_weeks(expand([60, 70, 55]), 50)
        assert mapping == {0: 0, 1: 1, 2: 2}

    def test_global_fallback(self):
        mapping = merge_weeks(expand([5, 5, 5]), 50)
        assert set(mapping.values()) == {0}

    def test_random_against_hand_simulation(self):
        rng = np.random.default_rng(0)
        for _ in range(30):
            counts = rng.integers(1, 80, size=rng.integers(1, 8)).tolist()
            got = merge_weeks(expand(counts), 30)
            want, _ = oracles.merge_weeks_by_hand(counts, 30)
            assert got == want, counts

    def test_surjective_contiguous(self):
        mapping = merge_weeks(expand([10, 60, 10, 60, 10]), 50)
        gids = sorted(set(mapping.values()))
        assert gids == list(range(len(gids)))


class TestOlsFe:
    def test_single_group_reduces_to_ols_with_intercept(self):
        rng = np.random.default_rng(1)
        n = 80
        x = rng.normal(size=n)
        y = 0.3 + 0.2 * x + rng.normal(size=n) * 0.05
        X = pd.DataFrame({"x": x})
        fit, _ = fit_ols_fe(X, y, np.zeros(n, dtype=int), pool=["x"], min_loans=50)
        assert len(fit.fixed_effects) == 1
        # matches plain OLS with intercept
        A = np.column_stack([np.ones(n), x])
        beta = np.linalg.lstsq(A, y, rcond=None)[0]
        assert fit.fixed_effects[0] == pytest.approx(beta[0], rel=1e-6)
        assert fit.beta[0] == pytest.approx(beta[1], rel=1e-6)

    def test_pure_between_week_shift_absorbed(self):
        # two-week fixture: label shift lives entirely in the FEs
        rng = np.random.default_rng(2)
        n_per = 60
        weeks = np.array([0] * n_per + [1] * n_per)
        x = np.concatenate([rng.normal(size=n_per), rng.normal(size=n_per)])
        x = x - x.mean()
        y = np.where(weeks == 0, 0.2, 0.6).astype(float)  # pure shift
        X = pd.DataFrame({"x": x})
        fit, _ = fit_ols_fe(X, y, weeks, pool=["x"], starts=[("x",)], min_loans=10)
        if fit.feature_names:  # if stepwise kept x, its coefficient is ~0
            assert abs(fit.beta[0]) < 1e-10
        assert fit.fixed_effects[0] == pytest.approx(0.2, abs=1e-10)
        assert fit.fixed_effects[1] == pytest.approx(0.6, abs=1e-10)

    def test_week_weights_are_proportions(self):
        rng = np.random.default_rng(3)
        weeks = expand([60, 40])
        y = rng.random(100)
        X = pd.DataFrame({"x": rng.normal(size=100)})
        fit, _ = fit_ols_fe(X, y, weeks, pool=["x"], min_loans=10)
        assert fit.week_weights.tolist() == [0.6, 0.4]

    def test_collinear_with_dummies_dropped(self):
        rng = np.random.default_rng(4)
        weeks = expand([30, 30])
        wk_feature = (weeks == 1).astype(float)  # constant within each week
        X = pd.DataFrame({"wk": wk_feature, "x": rng.normal(size=60)})
        y = rng.random(60)
        fit, _ = fit_ols_fe(X, y, weeks, pool=["wk", "x"], min_loans=10)
        assert fit.dropped_collinear == ["wk"]

    def test_fe_absorption_of_label_delta(self):
        # adding delta to one week's labels moves only that week's FE
        rng = np.random.default_rng(5)
        weeks = expand([40, 40])
        x = rng.normal(size=80)
        y = 0.3 * x + rng.normal(size=80) * 0.1
        X = pd.DataFrame({"x": x})
        base, _ = fit_ols_fe(X, y, weeks, pool=["x"], starts=[("x",)], min_loans=10)
        y2 = y + np.where(weeks == 1, 0.25, 0.0)
        bumped, _ = fit_ols_fe(X, y2, weeks, pool=["x"], starts=[("x",)], min_loans=10)
        assert bumped.beta[0] == pytest.approx(base.beta[0], abs=1e-10)
        assert bumped.fixed_effects[0] == pytest.approx(base.fixed_effects[0], abs=1e-10)
        assert bumped.fixed_effects[1] - base.fixed_effects[1] == pytest.approx(
            0.25, abs=1e-10
        )

    def test_predict_weighted_fe_frozen(self):
        from cdrscore.learn.weekly import OlsFeFit

        fit = OlsFeFit(
            feature_names=[],
            beta=np.zeros(0),
            fixed_effects=np.array([0.1, 0.2]),
            week_weights=np.array([0.6, 0.4]),
            week_mapping={0: 0, 1: 1},
            bic=0.0,
        )
        assert fit.predict_raw(np.empty((1, 0)))[0] == pytest.approx(0.14, rel=1e-12)


class TestWeeklyForest:
    def _signal(self, seed, n, weeks_counts):
        rng = np.random.default_rng(seed)
        weeks = expand(weeks_counts)
        X = rng.normal(size=(len(weeks), 4))
        y = (X[:, 0] + 0.5 * rng.normal(size=len(weeks)) > 0).astype(int)
        return X, y, weeks

    def test_weighted_mean_of_group_scores(self):
        X, y, weeks = self._signal(0, 120, [60, 60])
        fit = fit_rf_weekly(
            X, y, weeks, [f"f{j}" for j in range(4)],
            ForestSpec(n_trees=20, seed=1), min_loans=30,
        )
        parts = np.stack([f.predict_proba(X) for f in fit.forests])
        want = fit.week_weights @ parts
        np.testing.assert_allclose(fit.predict(X), want, rtol=0, atol=0)

    def test_convex_combination_bounds(self):
        X, y, weeks = self._signal(1, 150, [50, 50, 50])
        fit = fit_rf_weekly(
            X, y, weeks, [f"f{j}" for j in range(4)],
            ForestSpec(n_trees=15, seed=2), min_loans=30,
        )
        parts = np.stack([f.predict_proba(X) for f in fit.forests])
        s = fit.predict(X)
        assert (s >= parts.min(axis=0) - 1e-12).all()
        assert (s <= parts.max(axis=0) + 1e-12).all()

    def test_gamma_zero_uses_latest_only(self):
        X, y, weeks = self._signal(2, 120, [60, 60])
        fit = fit_rf_weekly(
            X, y, weeks, [f"f{j}" for j in range(4)],
            ForestSpec(n_trees=10, seed=3), min_loans=30, gamma=0.0,
        )
        assert fit.week_weights.tolist() == [0.0, 1.0]
        np.testing.assert_allclose(fit.predict(X), fit.forests[-1].predict_proba(X))

    def test_gamma_one_frozen_weighted_mean(self):
        # per-group scores (0.2, 0.4) with weights (0.5, 0.5) -> 0.3
        w = np.array([0.5, 0.5])
        assert w @ np.array([0.2, 0.4]) == pytest.approx(0.3, rel=1e-12)

    def test_single_class_group_merged_with_warning(self):
        rng = np.random.default_rng(3)
        weeks = expand([40, 40])
        X = rng.normal(size=(80, 3))
        y = np.concatenate([np.zeros(40, dtype=int), rng.integers(0, 2, 40)])
        fit = fit_rf_weekly(
            X, y, weeks, [f"f{j}" for j in range(3)],
            ForestSpec(n_trees=5, seed=4), min_loans=20,
        )
        assert len(fit.forests) == 1
        assert fit.warnings

    def test_all_single_class_rejected(self):
        X = np.random.default_rng(0).normal(size=(40, 2))
        with pytest.raises(ValueError):
            fit_rf_weekly(
                X, np.zeros(40, dtype=int), expand([20, 20]), ["a", "b"],
                ForestSpec(n_trees=3, seed=0), min_loans=10,
            )


class TestArtifacts:
    def _training_frame(self, seed=0, n=160):
        rng = np.random.default_rng(seed)
        X = pd.DataFrame(
            {
                "a": rng.normal(size=n),
                "b": rng.normal(size=n),
                "c": rng.normal(size=n),
            }
        )
        X.loc[rng.choice(n, 10, replace=False), "b"] = np.nan
        y = (rng.random(n) < 1 / (1 + np.exp(-1.8 * X["a"].to_numpy()))).astype(int)
        dates = pd.Series(
            pd.to_datetime("2016-01-04", utc=True)
            + pd.to_timedelta(rng.integers(0, 56, size=n), unit="D")
        )
        return X, y, dates

    @pytest.mark.parametrize(
        "family", ["LOGIT_STEPWISE", "RF", "OLS_FE_STEPWISE", "RF_WEEKLY_ENSEMBLE"]
    )
    def test_roundtrip_and_determinism(self, family, tmp_path):
        X, y, dates = self._training_frame()
        config = TrainConfig(family=family, seed=9, n_trees=10, min_loans_per_week=20)
        a = train(X, y, config, loan_dates=dates)
        b = train(X, y, config, loan_dates=dates)
        assert json.dumps(a.to_dict(), sort_keys=True) == json.dumps(
            b.to_dict(), sort_keys=True
        )
        path = tmp_path / "artifact.json"
        a.save(path)
        loaded = ModelArtifact.load(path)
        assert json.dumps(loaded.to_dict(), sort_keys=True) == json.dumps(
            a.to_dict(), sort_keys=True
        )
        s1 = predict(a, X)
        s2 = predict(loaded, X)
        np.testing.assert_array_equal(s1, s2)
        assert ((0 <= s1) & (s1 <= 1)).all()

    def test_predict_missing_column_error(self):
        X, y, dates = self._training_frame()
        art = train(X, y, TrainConfig(family="RF", seed=0, n_trees=5), loan_dates=dates)
        with pytest.raises(KeyError) as err:
            predict(art, X.drop(columns=["b"]))
        assert "b" in str(err.value)

    def test_logit_midpoint_score(self):
        X, y, dates = self._training_frame()
        art = train(X, y, TrainConfig(family="LOGIT_STEPWISE", seed=0), loan_dates=dates)
        if art.feature_names:
            # x chosen so the linear predictor is exactly 0 -> score 0.5
            intercept = art.params["intercept"]
            coef = np.asarray(art.params["coef"])
            x0 = -intercept / coef[0] if coef[0] != 0 else 0.0
            row = pd.DataFrame(
                {f: [x0 if f == art.feature_names[0] else 0.0] for f in X.columns}
            )
            for f in art.feature_names[1:]:
                row[f] = 0.0
            score = predict(art, row)[0]
            assert score == pytest.approx(0.5, abs=1e-9)

    def test_argmax_invariance_under_feature_scaling(self):
        X, y, dates = self._training_frame(seed=7)
        config = TrainConfig(family="LOGIT_STEPWISE", seed=1)
        base = train(X, y, config, loan_dates=dates)
        X2 = X.copy()
        X2["a"] = X2["a"] * 5.0
        scaled = train(X2, y, config, loan_dates=dates)
        s_base = predict(base, X)
        s_scaled = predict(scaled, X2)
        assert np.array_equal(np.argsort(s_base, kind="stable"),
                              np.argsort(s_scaled, kind="stable"))
