"""Shared model preprocessing: median imputation and univariate screening."""

from __future__ import annotations

import numpy as np
import pandas as pd


def impute(
    matrix: pd.DataFrame, constants: dict | None = None
) -> tuple[pd.DataFrame, dict, list[str]]:
    """Fill missing values with per-column training medians.

    When constants is given (scoring time) the stored values are reused even
    if the new data's medians differ. Missing-flag columns pass through
    untouched. Columns that are entirely missing at fit time get constant 0
    and are reported in the returned warning list.
    """
    out = matrix.copy()
    warnings: list[str] = []
    if constants is None:
        constants = {}
        for col in matrix.columns:
            if col.endswith(".missing"):
                continue
            series = matrix[col]
            if series.notna().any():
                constants[col] = float(series.median())
            else:
                constants[col] = 0.0
                warnings.append(col)
    for col, value in constants.items():
        if col in out.columns:
            out[col] = out[col].fillna(value)
    return out, constants, warnings


def t_statistic(r: float, n: int) -> float:
    if abs(r) >= 1.0:
        return float("inf") if r > 0 else float("-inf")
    return r * np.sqrt((n - 2) / (1.0 - r * r))


def screen_univariate(matrix: pd.DataFrame, default: np.ndarray) -> pd.DataFrame:
    """Point-biserial correlation of each feature with repayment (1 - default)
    over its non-missing rows; ranked by |t| descending, degenerate columns
    last. Returns columns (feature, r, t, n)."""
    y = 1.0 - np.asarray(default, dtype=float)
    rows = []
    for col in matrix.columns:
        x = matrix[col].to_numpy(dtype=float)
        valid = np.isfinite(x)
        n = int(valid.sum())
        xv, yv = x[valid], y[valid]
        if n < 3 or xv.min() == xv.max() or yv.min() == yv.max():
            rows.append((col, np.nan, np.nan, n))
            continue
        xm, ym = xv.mean(), yv.mean()
        sxy = ((xv - xm) * (yv - ym)).sum()
        sxx = ((xv - xm) ** 2).sum()
        syy = ((yv - ym) ** 2).sum()
        r = float(np.clip(sxy / np.sqrt(sxx * syy), -1.0, 1.0))
        rows.append((col, r, t_statistic(r, n), n))
    table = pd.DataFrame(rows, columns=["feature", "r", "t", "n"])
    abs_t = table["t"].abs()
    degenerate = table["t"].isna()
    order = sorted(
        range(len(table)),
        key=lambda i: (
            bool(degenerate.iloc[i]),
            -(abs_t.iloc[i] if not degenerate.iloc[i] else 0.0),
            table["feature"].iloc[i],
        ),
    )
    return table.iloc[order].reset_index(drop=True)
