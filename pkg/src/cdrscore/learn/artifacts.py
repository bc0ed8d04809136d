"""Model artifacts: a uniform train/serialize/predict facade over the four
model families.

Families:
  LOGIT_STEPWISE      logistic regression, stepwise-BIC feature selection
  RF                  random forest on all candidate features
  OLS_FE_STEPWISE     week-fixed-effects linear probability model
  RF_WEEKLY_ENSEMBLE  one forest per merged loan week, proportion-weighted

Artifacts serialize to versioned JSON and round-trip bit-exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from ..util import canonical_json, config_hash, jsonable, sha256_hex
from .forest import ForestSpec, RandomForest
from .logistic import bic, fit_logistic, stepwise_select
from .preprocess import impute, screen_univariate
from .weekly import OlsFeFit, WeeklyForestFit, fit_ols_fe, fit_rf_weekly, week_index

FAMILIES = ("LOGIT_STEPWISE", "RF", "OLS_FE_STEPWISE", "RF_WEEKLY_ENSEMBLE")

ARTIFACT_VERSION = "1"


@dataclass(frozen=True)
class TrainConfig:
    family: str
    seed: int = 0
    screen_top_m: int = 200
    start_sizes: tuple = (0, 1, 5)  # stepwise start sets from the screen ranking
    n_trees: int = 500
    mtry: int | None = None
    min_leaf: int = 1
    min_loans_per_week: int = 50
    recency_gamma: float = 1.0
    max_steps: int = 200

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(
                f"unknown family {self.family!r}; valid: {', '.join(FAMILIES)}"
            )

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "seed": self.seed,
            "screen_top_m": self.screen_top_m,
            "start_sizes": list(self.start_sizes),
            "n_trees": self.n_trees,
            "mtry": self.mtry,
            "min_leaf": self.min_leaf,
            "min_loans_per_week": self.min_loans_per_week,
            "recency_gamma": self.recency_gamma,
            "max_steps": self.max_steps,
        }


@dataclass
class ModelArtifact:
    family: str
    feature_names: list[str]  # exactly the columns predict() consumes
    params: dict
    imputation: dict
    week_weights: list | None
    fingerprint: dict
    warnings: list = field(default_factory=list)
    version: str = ARTIFACT_VERSION

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "family": self.family,
            "feature_names": self.feature_names,
            "params": jsonable(self.params),
            "imputation": jsonable(self.imputation),
            "week_weights": jsonable(self.week_weights),
            "fingerprint": self.fingerprint,
            "warnings": list(self.warnings),
        }

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(canonical_json(self.to_dict()))

    @classmethod
    def from_dict(cls, d: dict) -> "ModelArtifact":
        return cls(
            family=d["family"],
            feature_names=list(d["feature_names"]),
            params=d["params"],
            imputation=d["imputation"],
            week_weights=d["week_weights"],
            fingerprint=d["fingerprint"],
            warnings=list(d.get("warnings", [])),
            version=d.get("version", ARTIFACT_VERSION),
        )

    @classmethod
    def load(cls, path: str | Path) -> "ModelArtifact":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _fingerprint(X: pd.DataFrame, y: np.ndarray, config: TrainConfig) -> dict:
    payload = X.to_csv(float_format=lambda v: repr(float(v))).encode() + bytes(
        np.asarray(y, dtype=np.int8)
    )
    return {
        "data_hash": sha256_hex(payload),
        "config_hash": config_hash(config.to_dict()),
        "seed": config.seed,
    }


def _stepwise_pool(
    X: pd.DataFrame, y: np.ndarray, config: TrainConfig
) -> tuple[list[str], list[tuple]]:
    ranking = screen_univariate(X, y)
    ranked = ranking.loc[ranking["t"].notna(), "feature"].tolist()
    pool = ranked[: config.screen_top_m]
    starts = []
    for size in config.start_sizes:
        starts.append(tuple(pool[:size]))
    return pool, starts or [()]


def train(
    X: pd.DataFrame,
    y: np.ndarray,
    config: TrainConfig,
    loan_dates: pd.Series | None = None,
) -> ModelArtifact:
    """Fit one family on a feature matrix slice (NaN = missing; imputation is
    fitted here and stored). CDR-W families need loan_dates for week indices."""
    y = np.asarray(y)
    completed, constants, warn_cols = impute(X)
    warnings = [f"all-missing column imputed to 0: {c}" for c in warn_cols]
    fingerprint = _fingerprint(X, y, config)

    if config.family in ("OLS_FE_STEPWISE", "RF_WEEKLY_ENSEMBLE"):
        if loan_dates is None:
            raise ValueError(f"{config.family} requires loan_dates")
        weeks = week_index(loan_dates)

    if config.family == "LOGIT_STEPWISE":
        pool, starts = _stepwise_pool(X, y, config)
        result = stepwise_select(
            completed, y, pool=pool, starts=starts, max_steps=config.max_steps
        )
        fit = result.fit
        params = {
            "intercept": float(fit.coef[0]),
            "coef": fit.coef[1:].tolist(),
            "se": fit.se.tolist(),
            "loglik": fit.loglik,
            "bic": result.bic,
            "converged": fit.converged,
            "ridge_used": fit.ridge_used,
        }
        features = list(result.features)
        week_weights = None
        warnings += result.warnings

    elif config.family == "RF":
        spec = ForestSpec(
            n_trees=config.n_trees,
            mtry=config.mtry,
            min_leaf=config.min_leaf,
            seed=config.seed,
        )
        features = list(X.columns)
        forest = RandomForest(spec, features).fit(completed.to_numpy(dtype=float), y)
        params = {"forest": forest.to_dict()}
        week_weights = None

    elif config.family == "OLS_FE_STEPWISE":
        pool, starts = _stepwise_pool(X, y, config)
        fit, selection = fit_ols_fe(
            completed,
            y,
            weeks,
            pool=pool,
            starts=starts,
            min_loans=config.min_loans_per_week,
            max_steps=config.max_steps,
        )
        features = list(fit.feature_names)
        params = {
            "beta": fit.beta.tolist(),
            "fixed_effects": fit.fixed_effects.tolist(),
            "bic": fit.bic,
            "dropped_collinear": fit.dropped_collinear,
        }
        week_weights = fit.week_weights.tolist()
        warnings += fit.warnings

    else:  # RF_WEEKLY_ENSEMBLE
        spec = ForestSpec(
            n_trees=config.n_trees,
            mtry=config.mtry,
            min_leaf=config.min_leaf,
            seed=config.seed,
        )
        features = list(X.columns)
        ensemble = fit_rf_weekly(
            completed.to_numpy(dtype=float),
            y,
            weeks,
            features,
            spec,
            min_loans=config.min_loans_per_week,
            gamma=config.recency_gamma,
        )
        params = {
            "forests": [f.to_dict() for f in ensemble.forests],
            "proportions": ensemble.proportions.tolist(),
            "gamma": ensemble.gamma,
        }
        week_weights = ensemble.week_weights.tolist()
        warnings += ensemble.warnings

    constants_used = {f: constants[f] for f in features if f in constants}
    return ModelArtifact(
        family=config.family,
        feature_names=features,
        params=params,
        imputation=constants_used,
        week_weights=week_weights,
        fingerprint=fingerprint,
        warnings=warnings,
    )


def predict(artifact: ModelArtifact, X: pd.DataFrame, raw: bool = False) -> np.ndarray:
    """Score rows with a trained artifact (higher = riskier).

    Missing values are filled with the artifact's stored constants. Scores
    are probabilities in [0, 1]; raw=True returns the unclamped linear score
    for OLS-FE (the ranking-faithful value)."""
    missing = [f for f in artifact.feature_names if f not in X.columns]
    if missing:
        raise KeyError(
            f"missing required feature column(s): {', '.join(missing[:10])}"
        )
    sliced = X[artifact.feature_names]
    completed, _, _ = impute(sliced, constants=dict(artifact.imputation))
    mat = completed.to_numpy(dtype=float)

    if artifact.family == "LOGIT_STEPWISE":
        from .logistic import sigmoid

        coef = np.asarray(artifact.params["coef"], dtype=float)
        return sigmoid(artifact.params["intercept"] + mat @ coef)

    if artifact.family == "RF":
        forest = RandomForest.from_dict(artifact.params["forest"])
        return forest.predict_proba(mat)

    if artifact.family == "OLS_FE_STEPWISE":
        beta = np.asarray(artifact.params["beta"], dtype=float)
        weights = np.asarray(artifact.week_weights, dtype=float)
        fe = np.asarray(artifact.params["fixed_effects"], dtype=float)
        score = mat @ beta + float(weights @ fe)
        return score if raw else np.clip(score, 0.0, 1.0)

    if artifact.family == "RF_WEEKLY_ENSEMBLE":
        weights = np.asarray(artifact.week_weights, dtype=float)
        parts = np.stack(
            [
                RandomForest.from_dict(d).predict_proba(mat)
                for d in artifact.params["forests"]
            ]
        )
        return weights @ parts

    raise ValueError(f"unknown family {artifact.family!r}")
