from .preprocess import impute, screen_univariate, t_statistic
from .logistic import (
    LogisticFit,
    QuasiSeparationError,
    StepwiseResult,
    bic,
    fit_logistic,
    sigmoid,
    stepwise_select,
)
from .forest import ForestSpec, RandomForest, derive_tree_seed
from .weekly import (
    OlsFeFit,
    WeeklyForestFit,
    fit_ols_fe,
    fit_rf_weekly,
    merge_weeks,
    week_index,
)
from .artifacts import FAMILIES, ModelArtifact, TrainConfig, predict, train

__all__ = [
    "impute",
    "screen_univariate",
    "t_statistic",
    "LogisticFit",
    "QuasiSeparationError",
    "StepwiseResult",
    "bic",
    "fit_logistic",
    "sigmoid",
    "stepwise_select",
    "ForestSpec",
    "RandomForest",
    "derive_tree_seed",
    "OlsFeFit",
    "WeeklyForestFit",
    "fit_ols_fe",
    "fit_rf_weekly",
    "merge_weeks",
    "week_index",
    "FAMILIES",
    "ModelArtifact",
    "TrainConfig",
    "predict",
    "train",
]
