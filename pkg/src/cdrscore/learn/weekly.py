"""Temporally-regularized model families: week-fixed-effects OLS and the
per-week random-forest ensemble.

Both families fit on within-week variation only. At prediction time the
unknown future-week effect is replaced by the average of training-week
effects weighted by the proportion of loans granted in each (merged) week.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd

from .forest import ForestSpec, RandomForest, derive_tree_seed
from .logistic import StepwiseResult, bic, stepwise_select


def week_index(loan_dates: pd.Series) -> np.ndarray:
    """Whole weeks since the earliest loan date in the set."""
    days = (loan_dates - loan_dates.min()).dt.days.to_numpy()
    return (days // 7).astype(np.int64)


def merge_weeks(week_ids: Sequence[int], min_loans: int) -> dict[int, int]:
    """Map raw week index -> contiguous merged-group index.

    Greedy left-to-right: the leftmost group below min_loans merges into the
    group before it (falling back to the one after), until every group meets
    the minimum or a single group remains.
    """
    if min_loans < 1:
        raise ValueError("min_loans must be >= 1")
    week_ids = np.asarray(week_ids)
    weeks, counts = np.unique(week_ids, return_counts=True)
    groups = [[w] for w in weeks]
    sizes = list(counts)
    while len(groups) > 1:
        deficient = next((g for g, s in enumerate(sizes) if s < min_loans), None)
        if deficient is None:
            break
        target = deficient - 1 if deficient > 0 else deficient + 1
        lo, hi = sorted((deficient, target))
        groups[lo] += groups[hi]
        sizes[lo] += sizes[hi]
        del groups[hi], sizes[hi]
    return {w: g for g, weeks_in_g in enumerate(groups) for w in weeks_in_g}


def _group_ids(week_ids: np.ndarray, mapping: dict[int, int]) -> np.ndarray:
    return np.asarray([mapping[w] for w in week_ids], dtype=np.int64)


def _demean_by_group(values: np.ndarray, gids: np.ndarray, n_groups: int) -> np.ndarray:
    sums = np.zeros((n_groups,) + values.shape[1:])
    np.add.at(sums, gids, values)
    counts = np.bincount(gids, minlength=n_groups).astype(float)
    means = sums / counts.reshape((-1,) + (1,) * (values.ndim - 1))
    return values - means[gids]


@dataclass
class OlsFeFit:
    feature_names: list[str]
    beta: np.ndarray  # one coefficient per selected feature (no intercept)
    fixed_effects: np.ndarray  # one per merged week group
    week_weights: np.ndarray  # proportion of training loans per group
    week_mapping: dict[int, int]
    bic: float
    dropped_collinear: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def predict_raw(self, X: np.ndarray) -> np.ndarray:
        offset = float(self.week_weights @ self.fixed_effects)
        return X @ self.beta + offset

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.clip(self.predict_raw(X), 0.0, 1.0)


def _ols_rss(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, float]:
    if X.shape[1] == 0:
        return np.zeros(0), float(y @ y)
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    return beta, float(resid @ resid)


def _gaussian_loglik(rss: float, n: int) -> float:
    rss = max(rss, 1e-300)
    return -0.5 * n * (np.log(2.0 * np.pi) + np.log(rss / n) + 1.0)


def fit_ols_fe(
    X: pd.DataFrame,
    y: np.ndarray,
    week_ids: np.ndarray,
    pool: Sequence[str],
    starts: Sequence[Sequence[str]] = ((),),
    min_loans: int = 50,
    max_steps: int = 200,
) -> tuple[OlsFeFit, StepwiseResult]:
    """Linear probability model on default with merged-week dummies (no
    global intercept); features chosen by stepwise BIC on the FE-augmented
    model. Features constant within every week group are collinear with the
    dummies and are dropped with a warning."""
    y = np.asarray(y, dtype=float)
    n = len(y)
    mapping = merge_weeks(week_ids, min_loans)
    gids = _group_ids(np.asarray(week_ids), mapping)
    n_groups = int(gids.max()) + 1
    counts = np.bincount(gids, minlength=n_groups).astype(float)
    if (counts < 2).any():
        raise ValueError("every merged week group needs at least 2 loans")

    y_t = _demean_by_group(y, gids, n_groups)

    dropped: list[str] = []
    usable: list[str] = []
    demeaned: dict[str, np.ndarray] = {}
    for name in pool:
        col = X[name].to_numpy(dtype=float)
        d = _demean_by_group(col, gids, n_groups)
        if np.abs(d).max() < 1e-12:
            dropped.append(name)
        else:
            usable.append(name)
            demeaned[name] = d

    def fit_fn(features: list[str]) -> tuple[object, float]:
        mat = (
            np.column_stack([demeaned[f] for f in features])
            if features
            else np.empty((n, 0))
        )
        beta, rss = _ols_rss(mat, y_t)
        k = len(features) + n_groups
        return beta, bic(_gaussian_loglik(rss, n), k, n)

    selection = stepwise_select(
        X, y, pool=usable, starts=starts, fit_fn=fit_fn, max_steps=max_steps
    )
    features = selection.features
    beta = selection.fit if len(features) else np.zeros(0)

    X_sel = X[features].to_numpy(dtype=float) if features else np.empty((n, 0))
    group_y = np.bincount(gids, weights=y, minlength=n_groups) / counts
    if features:
        xb = X_sel @ beta
        group_xb = np.bincount(gids, weights=xb, minlength=n_groups) / counts
        fixed_effects = group_y - group_xb
    else:
        fixed_effects = group_y

    fit = OlsFeFit(
        feature_names=list(features),
        beta=np.asarray(beta, dtype=float),
        fixed_effects=fixed_effects,
        week_weights=counts / counts.sum(),
        week_mapping=mapping,
        bic=selection.bic,
        dropped_collinear=dropped,
        warnings=selection.warnings,
    )
    return fit, selection


@dataclass
class WeeklyForestFit:
    feature_names: list[str]
    forests: list[RandomForest]
    week_weights: np.ndarray  # recency-adjusted combination weights
    proportions: np.ndarray  # raw loan proportions per group
    week_mapping: dict[int, int]
    gamma: float
    warnings: list[str] = field(default_factory=list)

    def predict(self, X: np.ndarray) -> np.ndarray:
        parts = np.stack([f.predict_proba(X) for f in self.forests])
        return self.week_weights @ parts


def _merge_single_class(gids: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, list[str]]:
    """Merge any single-class merged group into its neighbor (previous, else
    next) until every group has both classes or one group remains."""
    warnings: list[str] = []
    gids = gids.copy()
    while True:
        groups = np.unique(gids)
        if len(groups) == 1:
            break
        bad = None
        for g in groups:
            labels = y[gids == g]
            if labels.min() == labels.max():
                bad = g
                break
        if bad is None:
            break
        pos = int(np.where(groups == bad)[0][0])
        target = groups[pos - 1] if pos > 0 else groups[pos + 1]
        warnings.append(f"merged single-class week group {bad} into {target}")
        gids[gids == bad] = target
    # renumber contiguously, preserving order
    _, gids = np.unique(gids, return_inverse=True)
    return gids, warnings


def fit_rf_weekly(
    X: np.ndarray,
    y: np.ndarray,
    week_ids: np.ndarray,
    feature_names: Sequence[str],
    spec: ForestSpec,
    min_loans: int = 50,
    gamma: float = 1.0,
) -> WeeklyForestFit:
    """One forest per merged week group, combined by loan-proportion weights
    (optionally decayed by gamma per week-group of distance from the most
    recent group)."""
    y = np.asarray(y).astype(np.int8)
    mapping = merge_weeks(week_ids, min_loans)
    gids = _group_ids(np.asarray(week_ids), mapping)
    gids, warnings = _merge_single_class(gids, y)
    n_groups = int(gids.max()) + 1
    if n_groups == 1 and y.min() == y.max():
        raise ValueError("training data has a single class after all merging")
    # keep the week mapping consistent with post-merge group ids
    week_to_group = {}
    for w, g in mapping.items():
        rows = np.asarray(week_ids) == w
        week_to_group[w] = int(gids[rows][0]) if rows.any() else g

    forests = []
    counts = np.bincount(gids, minlength=n_groups).astype(float)
    for g in range(n_groups):
        rows = gids == g
        sub_spec = ForestSpec(
            n_trees=spec.n_trees,
            mtry=spec.mtry,
            min_leaf=spec.min_leaf,
            seed=derive_tree_seed(spec.seed, 104729 + g),
        )
        forest = RandomForest(sub_spec, feature_names).fit(X[rows], y[rows])
        forests.append(forest)

    proportions = counts / counts.sum()
    latest = n_groups - 1
    decay = np.array([gamma ** (latest - g) for g in range(n_groups)])
    weights = proportions * decay
    total = weights.sum()
    if total <= 0:
        raise ValueError("recency weights sum to zero")
    weights = weights / total
    return WeeklyForestFit(
        feature_names=list(feature_names),
        forests=forests,
        week_weights=weights,
        proportions=proportions,
        week_mapping=week_to_group,
        gamma=gamma,
        warnings=warnings,
    )
