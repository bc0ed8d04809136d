"""Evaluation protocol: repeated k-fold cross-validation, ROC/AUC,
acceptance curves, quintile risk ratios, offset out-of-time testing, and
subgroup reporting.

Default is the positive class throughout; higher scores mean riskier.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from .events import CdrStore, LoanTable
from .features import FeatureMatrix, assemble_matrix
from .learn import TrainConfig, predict, train
from .taxonomy import TaxonomyConfig


def _check_classes(labels: np.ndarray) -> tuple[int, int]:
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("need at least one positive and one negative label")
    return n_pos, n_neg


def auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Rank-statistic AUC: P(score_pos > score_neg) + 0.5 P(tie)."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    n_pos, n_neg = _check_classes(labels)
    ranks = rankdata(scores)
    pos_rank_sum = ranks[labels == 1].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def roc_points(scores: Sequence[float], labels: Sequence[int]) -> np.ndarray:
    """Ordered (FPR, TPR) points, one per distinct threshold plus the two
    endpoints; the trapezoid integral equals auc() to 1e-12."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    n_pos, n_neg = _check_classes(labels)
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    tp = np.cumsum(sorted_labels == 1)
    fp = np.cumsum(sorted_labels == 0)
    distinct = np.nonzero(np.diff(sorted_scores))[0]
    cut = np.r_[distinct, len(scores) - 1]
    pts = np.column_stack([fp[cut] / n_neg, tp[cut] / n_pos])
    pts = np.vstack([[0.0, 0.0], pts])
    if pts[-1, 0] != 1.0 or pts[-1, 1] != 1.0:
        pts = np.vstack([pts, [1.0, 1.0]])
    return pts


def trapezoid_auc(points: np.ndarray) -> float:
    x, y = points[:, 0], points[:, 1]
    return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2.0))


def acceptance_curve(
    scores: Sequence[float],
    labels: Sequence[int],
    grid: Sequence[float] | None = None,
) -> list[tuple[float, float]]:
    """Default rate among the floor(q*n) lowest-score rows for each grid
    fraction q; grid points that admit no rows are omitted."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    _check_classes(labels)
    n = len(scores)
    if grid is None:
        grid = np.linspace(0.01, 1.0, 100)
    order = np.argsort(scores, kind="stable")
    cumulative = np.cumsum(labels[order])
    out = []
    for q in grid:
        k = int(np.floor(q * n))
        if k == 0:
            continue
        out.append((float(q), float(cumulative[k - 1] / k)))
    return out


@dataclass
class QuintileResult:
    ratio: float | None  # None when the bottom quintile has zero defaults
    top_rate: float
    bottom_rate: float

    @property
    def defined(self) -> bool:
        return self.ratio is not None


def quintile_ratio(scores: Sequence[float], labels: Sequence[int]) -> QuintileResult:
    """Top-to-bottom default-rate ratio over score quintiles (stable ties)."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if len(scores) < 5:
        raise ValueError("need at least 5 rows for quintiles")
    order = np.argsort(scores, kind="stable")
    chunks = np.array_split(labels[order], 5)
    bottom = float(np.mean(chunks[0]))
    top = float(np.mean(chunks[-1]))
    ratio = top / bottom if bottom > 0 else None
    return QuintileResult(ratio=ratio, top_rate=top, bottom_rate=bottom)


def subgroup_auc(
    scores: Sequence[float], labels: Sequence[int], groups: Sequence
) -> dict:
    """Per-group AUC; groups without both classes are marked unreportable."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    groups = np.asarray(groups)
    table = {}
    for g in pd.unique(groups):
        mask = groups == g
        sub_labels = labels[mask]
        if len(sub_labels) < 2 or sub_labels.min() == sub_labels.max():
            table[str(g)] = {"n": int(mask.sum()), "auc": None}
        else:
            table[str(g)] = {
                "n": int(mask.sum()),
                "auc": auc(scores[mask], sub_labels),
            }
    return table


@dataclass(frozen=True)
class FoldPlan:
    n_folds: int = 5
    n_draws: int = 10
    seed: int = 0

    def assignments(self, n: int) -> np.ndarray:
        """(n_draws, n) fold id per row per draw; fold sizes differ by <= 1."""
        out = np.empty((self.n_draws, n), dtype=np.int64)
        for draw in range(self.n_draws):
            rng = np.random.default_rng(np.random.SeedSequence((self.seed, draw)))
            perm = rng.permutation(n)
            folds = np.array_split(perm, self.n_folds)
            for fold_id, rows in enumerate(folds):
                out[draw, rows] = fold_id
        return out

    def to_dict(self) -> dict:
        return {"n_folds": self.n_folds, "n_draws": self.n_draws, "seed": self.seed}


FPR_GRID = np.linspace(0.0, 1.0, 101)


def _interp_roc(points: np.ndarray) -> np.ndarray:
    return np.interp(FPR_GRID, points[:, 0], points[:, 1])


def cross_validate(
    X: pd.DataFrame,
    y: np.ndarray,
    loan_dates: pd.Series,
    config: TrainConfig,
    plan: FoldPlan,
    groups: Sequence | None = None,
    acceptance_grid: Sequence[float] | None = None,
) -> dict:
    """Repeated k-fold CV with all preprocessing fitted fold-locally.

    Each row is scored by the model whose training fold complement excludes
    it; per-draw pooled scores feed the ROC/acceptance/quintile summaries.
    Folds whose held-out labels are single-class are skipped for fold AUC
    (with a warning) but still scored for the pooled curves.
    """
    y = np.asarray(y)
    n = len(y)
    assignments = plan.assignments(n)
    warnings: list[str] = []
    per_draw_fold_auc: list[list[float | None]] = []
    draw_auc: list[float] = []
    roc_curves = []
    acc_curves = []
    quintiles = []
    subgroup_tables = []

    for draw in range(plan.n_draws):
        fold_of = assignments[draw]
        pooled = np.full(n, np.nan)
        fold_aucs: list[float | None] = []
        for fold in range(plan.n_folds):
            test_mask = fold_of == fold
            train_mask = ~test_mask
            y_train = y[train_mask]
            if y_train.min() == y_train.max():
                raise ValueError(
                    f"training complement of draw {draw} fold {fold} is single-class"
                )
            artifact = train(
                X[train_mask],
                y_train,
                config,
                loan_dates=loan_dates[train_mask],
            )
            scores = predict(artifact, X[test_mask], raw=True)
            pooled[test_mask] = scores
            y_test = y[test_mask]
            if len(y_test) == 0 or y_test.min() == y_test.max():
                warnings.append(
                    f"draw {draw} fold {fold}: single-class held-out labels, AUC skipped"
                )
                fold_aucs.append(None)
            else:
                fold_aucs.append(auc(scores, y_test))
        per_draw_fold_auc.append(fold_aucs)
        computed = [a for a in fold_aucs if a is not None]
        draw_auc.append(float(np.mean(computed)))
        roc_curves.append(_interp_roc(roc_points(pooled, y)))
        acc_curves.append(acceptance_curve(pooled, y, acceptance_grid))
        quintiles.append(quintile_ratio(pooled, y))
        if groups is not None:
            subgroup_tables.append(subgroup_auc(pooled, y, groups))

    mean_auc = float(np.mean(draw_auc))
    sd_auc = float(np.std(draw_auc, ddof=1)) if len(draw_auc) > 1 else None
    acc_fracs = [q for q, _ in acc_curves[0]]
    acc_matrix = np.array([[r for _, r in curve] for curve in acc_curves])
    roc_matrix = np.stack(roc_curves)
    defined_ratios = [q.ratio for q in quintiles if q.defined]

    report = {
        "per_draw_fold_auc": per_draw_fold_auc,
        "draw_auc": draw_auc,
        "mean_auc": mean_auc,
        "sd_auc": sd_auc,
        "roc": {
            "fpr": FPR_GRID.tolist(),
            "tpr_mean": roc_matrix.mean(axis=0).tolist(),
            "tpr_sd": (
                roc_matrix.std(axis=0, ddof=1).tolist()
                if len(roc_curves) > 1
                else [0.0] * len(FPR_GRID)
            ),
        },
        "acceptance": {
            "fraction": acc_fracs,
            "rate_mean": acc_matrix.mean(axis=0).tolist(),
            "rate_sd": (
                acc_matrix.std(axis=0, ddof=1).tolist()
                if len(acc_curves) > 1
                else [0.0] * acc_matrix.shape[1]
            ),
        },
        "quintile": {
            "per_draw_ratio": [q.ratio for q in quintiles],
            "mean_ratio": float(np.mean(defined_ratios)) if defined_ratios else None,
            "undefined_draws": sum(1 for q in quintiles if not q.defined),
        },
        "warnings": warnings,
    }
    if groups is not None:
        merged: dict = {}
        for table in subgroup_tables:
            for g, row in table.items():
                merged.setdefault(g, {"n": row["n"], "aucs": []})
                if row["auc"] is not None:
                    merged[g]["aucs"].append(row["auc"])
        report["subgroups"] = {
            g: {
                "n": v["n"],
                "mean_auc": float(np.mean(v["aucs"])) if v["aucs"] else None,
                "sd_auc": (
                    float(np.std(v["aucs"], ddof=1)) if len(v["aucs"]) > 1 else None
                ),
            }
            for g, v in merged.items()
        }
    return report


# ---------------------------------------------------------------------------
# offset out-of-time harness
# ---------------------------------------------------------------------------

@dataclass
class OffsetPlan:
    median_date: pd.Timestamp
    midpoint: pd.Timestamp
    early_ids: list[str]
    late_ids: list[str]
    empty_window_ids: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "median_date": str(self.median_date),
            "midpoint": str(self.midpoint),
            "n_early": len(self.early_ids),
            "n_late": len(self.late_ids),
            "n_empty_windows": len(self.empty_window_ids),
        }


def build_offset(loans: LoanTable, span: tuple) -> OffsetPlan:
    """Split loans at the median grant date (ties to early) and the phone
    data at the span midpoint. Late loans dated before the midpoint keep an
    empty offset window and are reported."""
    dates = loans.frame["loan_date"]
    if dates.nunique() < 2:
        raise ValueError("need at least 2 distinct loan dates")
    start, end = pd.Timestamp(span[0]), pd.Timestamp(span[1])
    if start.tzinfo is None:
        start = start.tz_localize("UTC")
    if end.tzinfo is None:
        end = end.tz_localize("UTC")
    days = (dates - dates.min()).dt.days.to_numpy()
    median_days = float(np.median(days))
    median_date = dates.min() + pd.Timedelta(days=median_days)
    early_mask = dates <= median_date
    midpoint = start + (end - start) / 2
    early = dates.index[early_mask].tolist()
    late = dates.index[~early_mask].tolist()
    empty = [s for s in late if dates.loc[s] <= midpoint]
    return OffsetPlan(
        median_date=median_date,
        midpoint=midpoint,
        early_ids=early,
        late_ids=late,
        empty_window_ids=empty,
    )


def _slice_store(store: CdrStore, lo: pd.Timestamp, hi: pd.Timestamp) -> CdrStore:
    frame = store.frame
    frame = frame[(frame["timestamp"] >= lo) & (frame["timestamp"] < hi)]
    return CdrStore(
        frame=frame,
        window=(lo, hi),
        calendar=store.calendar,
        report=store.report,
        clipped=store.clipped,
        loan_dates=store.loan_dates,
    )


def _slice_loans(loans: LoanTable, ids: list[str]) -> LoanTable:
    return LoanTable(frame=loans.frame.loc[ids])


def offset_features(
    taxonomy: TaxonomyConfig,
    store: CdrStore,
    loans: LoanTable,
    plan: OffsetPlan,
) -> tuple[FeatureMatrix, FeatureMatrix]:
    """Featurize the early and late halves independently under the offset
    windows (same trailing whole-bucket rule, applied within each half).

    Constant-column dropping is disabled so both halves share one column
    layout; the country domain is pinned from the full store for the same
    reason.
    """
    start, end = store.window
    countries = sorted(store.frame["counterparty_country"].dropna().unique())
    if not countries:
        countries = ["UNKNOWN"]

    early_loans = _slice_loans(loans, plan.early_ids)
    early_store = _slice_store(store, start, plan.midpoint)
    early_bounds = early_loans.frame["loan_date"].clip(upper=plan.midpoint)
    fm_early = assemble_matrix(
        taxonomy,
        early_store,
        early_loans,
        boundaries=early_bounds,
        drop_constant=False,
        country_values=countries,
    )

    late_loans = _slice_loans(loans, plan.late_ids)
    late_store = _slice_store(store, plan.midpoint, end)
    late_bounds = late_loans.frame["loan_date"].clip(upper=end)
    fm_late = assemble_matrix(
        taxonomy,
        late_store,
        late_loans,
        boundaries=late_bounds,
        drop_constant=False,
        country_values=countries,
    )
    return fm_early, fm_late


def out_of_time_eval(
    X_early: pd.DataFrame,
    y_early: np.ndarray,
    dates_early: pd.Series,
    X_late: pd.DataFrame,
    y_late: np.ndarray,
    config: TrainConfig,
    groups_late: Sequence | None = None,
) -> dict:
    """Fit on the early half, score the late half; single split, no draws."""
    y_early = np.asarray(y_early)
    y_late = np.asarray(y_late)
    _check_classes(y_early)
    _check_classes(y_late)
    artifact = train(X_early, y_early, config, loan_dates=dates_early)
    scores = predict(artifact, X_late, raw=True)
    report = {
        "auc": auc(scores, y_late),
        "n_train": len(y_early),
        "n_test": len(y_late),
        "quintile": quintile_ratio(scores, y_late).ratio if len(y_late) >= 5 else None,
    }
    if groups_late is not None:
        report["subgroups"] = subgroup_auc(scores, y_late, groups_late)
    return report
