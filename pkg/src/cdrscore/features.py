"""Summary statistics over series, aggregate vectors, locations, and series
pairs; assembly of the named feature matrix with missing indicators.

Missing discipline: a statistic that cannot be computed (insufficient
length, zero variance where variance is required, zero denominator) is NaN
in the value column and 1 in the companion "<name>.missing" column. No
sentinel numerics are ever written into value columns.

Constant-series detection is exact: a slice has zero variance iff its min
equals its max over valid entries, so no tolerance is involved.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from .aggregate import (
    BUCKETS,
    STREAMS,
    CHARACTERISTIC_DOMAINS,
    LocationSet,
    build_locations,
    build_series_panel,
)
from .events import CdrStore, LoanTable
from .taxonomy import TaxonomyConfig, spec_name, value_label
from .util import canonical_json, jsonable

EARTH_RADIUS_KM = 6371.0


# ---------------------------------------------------------------------------
# row-wise kernels over NaN-masked matrices
# ---------------------------------------------------------------------------

def _row_counts(M: np.ndarray) -> np.ndarray:
    return np.isfinite(M).sum(axis=1)


def _row_min_max(M: np.ndarray, counts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lo = np.where(np.isfinite(M), M, np.inf).min(axis=1)
    hi = np.where(np.isfinite(M), M, -np.inf).max(axis=1)
    empty = counts == 0
    lo = np.where(empty, np.nan, lo)
    hi = np.where(empty, np.nan, hi)
    return lo, hi


def _row_mean(M: np.ndarray, counts: np.ndarray) -> np.ndarray:
    s = np.nansum(M, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(counts > 0, s / counts, np.nan)


def _row_sd(
    M: np.ndarray, counts: np.ndarray, mean: np.ndarray, lo: np.ndarray, hi: np.ndarray
) -> np.ndarray:
    """Sample standard deviation (n-1); exactly 0 for constant rows."""
    with np.errstate(invalid="ignore"):
        d = M - mean[:, None]
        ss = np.nansum(d * d, axis=1)
        sd = np.sqrt(ss / np.maximum(counts - 1, 1))
    sd = np.where(counts >= 2, sd, np.nan)
    return np.where((counts >= 2) & (lo == hi), 0.0, sd)


def _row_quantiles(M: np.ndarray, qs: Sequence[float], counts: np.ndarray) -> np.ndarray:
    """Linear-interpolation quantiles per row, NaN-aware. Returns (n, len(qs))."""
    S = np.sort(M, axis=1)  # NaN sort to the end
    q = np.asarray(qs, dtype=float)[None, :] / 100.0
    with np.errstate(invalid="ignore"):
        pos = q * np.maximum(counts[:, None] - 1, 0)
    lo = np.floor(pos).astype(np.int64)
    hi = np.ceil(pos).astype(np.int64)
    cap = max(M.shape[1] - 1, 0)
    lo = np.clip(lo, 0, cap)
    hi = np.clip(hi, 0, cap)
    if M.shape[1] == 0:
        return np.full((M.shape[0], len(qs)), np.nan)
    vlo = np.take_along_axis(S, lo, axis=1)
    vhi = np.take_along_axis(S, hi, axis=1)
    with np.errstate(invalid="ignore"):
        out = vlo + (pos - lo) * (vhi - vlo)
    out[counts == 0] = np.nan
    return out


def _row_slope(M: np.ndarray) -> np.ndarray:
    """OLS slope of value on column index over valid cells; NaN below 2 points."""
    T = M.shape[1]
    valid = np.isfinite(M)
    n = valid.sum(axis=1).astype(np.float64)
    t = np.arange(T, dtype=np.float64)[None, :]
    X0 = np.where(valid, M, 0.0)
    W = valid.astype(np.float64)
    st = (t * W).sum(axis=1)
    sx = X0.sum(axis=1)
    stx = (t * X0).sum(axis=1)
    stt = (t * t * W).sum(axis=1)
    denom = n * stt - st * st
    with np.errstate(invalid="ignore", divide="ignore"):
        slope = (n * stx - st * sx) / denom
    return np.where((n >= 2) & (denom > 0), slope, np.nan)


def _row_pearson(A: np.ndarray, B: np.ndarray, min_pairs: int = 3) -> np.ndarray:
    """Pearson correlation per row over jointly-valid cells.

    NaN when fewer than min_pairs pairs or either slice is constant.
    """
    valid = np.isfinite(A) & np.isfinite(B)
    n = valid.sum(axis=1).astype(np.float64)
    Av = np.where(valid, A, np.nan)
    Bv = np.where(valid, B, np.nan)
    alo, ahi = _row_min_max(Av, n)
    blo, bhi = _row_min_max(Bv, n)
    with np.errstate(invalid="ignore", divide="ignore"):
        ma = np.nansum(Av, axis=1) / n
        mb = np.nansum(Bv, axis=1) / n
        dA = np.where(valid, A - ma[:, None], 0.0)
        dB = np.where(valid, B - mb[:, None], 0.0)
        saa = (dA * dA).sum(axis=1)
        sbb = (dB * dB).sum(axis=1)
        sab = (dA * dB).sum(axis=1)
        r = sab / np.sqrt(saa * sbb)
    r = np.clip(r, -1.0, 1.0)
    bad = (n < min_pairs) | (alo == ahi) | (blo == bhi) | (saa <= 0) | (sbb <= 0)
    return np.where(bad, np.nan, r)


def _row_spearman(A: np.ndarray, B: np.ndarray, min_pairs: int = 3) -> np.ndarray:
    """Spearman = Pearson on fractional (tie-averaged) ranks of valid pairs."""
    valid = np.isfinite(A) & np.isfinite(B)
    Av = np.where(valid, A, np.nan)
    Bv = np.where(valid, B, np.nan)
    if A.shape[1] == 0:
        return np.full(A.shape[0], np.nan)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ra = rankdata(Av, axis=1, nan_policy="omit")
        rb = rankdata(Bv, axis=1, nan_policy="omit")
    return _row_pearson(ra, rb, min_pairs=min_pairs)


def _weekly_bin(length: int) -> int:
    """Non-DC DFT bin whose implied period (length/f buckets) is nearest 7."""
    bins = np.arange(1, length // 2 + 1)
    periods = length / bins
    return int(bins[np.argmin(np.abs(periods - 7.0))])


def _row_periodicity(
    M: np.ndarray,
    starts: np.ndarray,
    lens: np.ndarray,
    n_ranks: int,
    weekly: bool,
) -> dict[str, np.ndarray]:
    """Mean-removed DFT magnitude features over contiguous windows.

    Windows shorter than 8 buckets and constant windows yield NaN for every
    periodicity feature.
    """
    n = M.shape[0]
    out = {f"Periodicity.Magnitude.Rank{r}": np.full(n, np.nan) for r in range(n_ranks)}
    out["Periodicity.MagnitudeRatio.Rank0_Rank2"] = np.full(n, np.nan)
    out["Periodicity.MagnitudeRatio.Rank0_AllOtherRanks"] = np.full(n, np.nan)
    out["Periodicity.MagnitudeRatio.Weekly_AllOtherRanks"] = np.full(n, np.nan)
    out["Periodicity.MagnitudeDifference.Rank0_Rank1"] = np.full(n, np.nan)

    for length in np.unique(lens):
        L = int(length)
        if L < 8:
            continue
        rows = np.nonzero(lens == length)[0]
        cols = starts[rows][:, None] + np.arange(L)[None, :]
        seg = M[rows[:, None], cols]
        const = seg.min(axis=1) == seg.max(axis=1)
        centered = seg - seg.mean(axis=1, keepdims=True)
        spec = np.abs(np.fft.rfft(centered, axis=1))[:, 1 : L // 2 + 1]
        order = np.sort(spec, axis=1)[:, ::-1]
        ranks = [order[:, r] if r < order.shape[1] else np.full(len(rows), np.nan)
                 for r in range(max(n_ranks, 3))]
        total = spec.sum(axis=1)
        others0 = total - ranks[0]

        def put(name: str, values: np.ndarray):
            out[name][rows] = np.where(const, np.nan, values)

        for r in range(n_ranks):
            put(f"Periodicity.Magnitude.Rank{r}", ranks[r])
        with np.errstate(invalid="ignore", divide="ignore"):
            put(
                "Periodicity.MagnitudeRatio.Rank0_Rank2",
                np.where(ranks[2] > 0, ranks[0] / ranks[2], np.nan),
            )
            put(
                "Periodicity.MagnitudeRatio.Rank0_AllOtherRanks",
                np.where(others0 > 0, ranks[0] / others0, np.nan),
            )
            if weekly:
                wb = _weekly_bin(L)
                wmag = spec[:, wb - 1]
                wother = total - wmag
                put(
                    "Periodicity.MagnitudeRatio.Weekly_AllOtherRanks",
                    np.where(wother > 0, wmag / wother, np.nan),
                )
        put("Periodicity.MagnitudeDifference.Rank0_Rank1", ranks[0] - ranks[1])
    return out


# ---------------------------------------------------------------------------
# window variants
# ---------------------------------------------------------------------------

def _variant_windows(
    M: np.ndarray, lengths: np.ndarray
) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """(start, len) of each time-window variant per row.

    AfterFirst starts at the first nonzero bucket; BetweenFirstAndLast spans
    first..last nonzero inclusive. Rows with no nonzero bucket get length 0
    for both (every stat missing).
    """
    T = M.shape[1]
    nz = np.isfinite(M) & (M != 0)
    any_nz = nz.any(axis=1)
    first = np.where(any_nz, nz.argmax(axis=1), 0)
    last = np.where(any_nz, T - 1 - nz[:, ::-1].argmax(axis=1), -1)
    zeros = np.zeros_like(lengths)
    return {
        "": (zeros, lengths),
        "AfterFirst": (first, np.where(any_nz, lengths - first, 0)),
        "BetweenFirstAndLast": (first, np.where(any_nz, last - first + 1, 0)),
    }


def _window_matrix(M: np.ndarray, starts: np.ndarray, lens: np.ndarray) -> np.ndarray:
    cols = np.arange(M.shape[1])[None, :]
    mask = (cols >= starts[:, None]) & (cols < (starts + lens)[:, None])
    return np.where(mask, M, np.nan)


def _central_dispersion_block(
    C: np.ndarray, taxonomy: TaxonomyConfig
) -> dict[str, np.ndarray]:
    counts = _row_counts(C)
    lo, hi = _row_min_max(C, counts)
    mean = _row_mean(C, counts)
    sd = _row_sd(C, counts, mean, lo, hi)
    qs = list(taxonomy.quantiles)
    qcols = _row_quantiles(C, [50] + qs, counts)
    median = qcols[:, 0]
    qmap = {p: qcols[:, i + 1] for i, p in enumerate(qs)}
    out = {
        "Mean": mean,
        "Median": median,
        "SD": sd,
        "Max": hi,
        "Min": lo,
    }
    for p in qs:
        out[f"Q{p}"] = qmap[p]
    for a, b in taxonomy.spreads:
        out[f"Q{a}minusQ{b}"] = qmap[a] - qmap[b]
    with np.errstate(invalid="ignore", divide="ignore"):
        out["Mean.SD"] = np.where(sd > 0, mean / sd, np.nan)
    return out


def _sequence_block(
    M: np.ndarray,
    lengths: np.ndarray,
    bucket: str,
    taxonomy: TaxonomyConfig,
) -> dict[tuple[str, bool, str], np.ndarray]:
    """All sequence statistics for one (stream, bucket) matrix.

    Keyed by (time_variant, nonzero, stat)."""
    out: dict[tuple[str, bool, str], np.ndarray] = {}
    windows = _variant_windows(M, lengths)
    for tv in taxonomy.time_variants:
        starts, lens = windows[tv]
        V = _window_matrix(M, starts, lens)
        for stat, vec in _central_dispersion_block(V, taxonomy).items():
            out[(tv, False, stat)] = vec
        out[(tv, False, "Slope")] = _row_slope(V)
        for lag in taxonomy.lags_for(bucket):
            A = V[:, lag:]
            B = V[:, : V.shape[1] - lag] if V.shape[1] > lag else V[:, :0]
            if A.shape[1] == 0:
                nanv = np.full(M.shape[0], np.nan)
                for method in taxonomy.autocorr_methods:
                    out[(tv, False, f"AutoCorrelation.L{lag}.{method}")] = nanv
                continue
            for method in taxonomy.autocorr_methods:
                f = _row_pearson if method == "Pearson" else _row_spearman
                out[(tv, False, f"AutoCorrelation.L{lag}.{method}")] = f(A, B)
        period = _row_periodicity(
            M, starts, lens, taxonomy.periodicity_ranks, weekly=(bucket == "Day")
        )
        for stat, vec in period.items():
            if stat.endswith("Weekly_AllOtherRanks") and bucket != "Day":
                continue
            out[(tv, False, stat)] = vec
        if taxonomy.include_nonzero:
            VN = V.copy()
            VN[V == 0] = np.nan
            for stat, vec in _central_dispersion_block(VN, taxonomy).items():
                out[(tv, True, stat)] = vec
    return out


# ---------------------------------------------------------------------------
# contract-level statistics (single series / single subscriber)
# ---------------------------------------------------------------------------

def _scalar(vec: np.ndarray) -> float | None:
    v = float(vec[0])
    return None if np.isnan(v) else v


def stat_central_dispersion(
    series: Sequence[float],
    quantiles: Sequence[int] = (20, 40, 50, 60, 80),
    spreads: Sequence[tuple] = ((80, 50), (50, 20), (60, 40)),
) -> dict[str, float | None]:
    """Mean/Median/SD/Max/Min, interpolated quantiles and spreads, Mean.SD."""
    tax = TaxonomyConfig(quantiles=tuple(quantiles), spreads=tuple(spreads))
    M = np.asarray(series, dtype=float)[None, :]
    block = _central_dispersion_block(M, tax)
    return {k: _scalar(v) for k, v in block.items()}


def stat_slope(series: Sequence[float]) -> float | None:
    return _scalar(_row_slope(np.asarray(series, dtype=float)[None, :]))


def stat_autocorr(series: Sequence[float], lag: int, method: str = "Pearson") -> float | None:
    x = np.asarray(series, dtype=float)[None, :]
    if x.shape[1] <= lag:
        return None
    A, B = x[:, lag:], x[:, : x.shape[1] - lag]
    f = _row_pearson if method == "Pearson" else _row_spearman
    return _scalar(f(A, B))


def stat_periodicity(
    series: Sequence[float], n_ranks: int = 3, weekly: bool = True
) -> dict[str, float | None]:
    x = np.asarray(series, dtype=float)[None, :]
    res = _row_periodicity(
        x, np.zeros(1, dtype=int), np.array([x.shape[1]]), n_ranks, weekly
    )
    if not weekly:
        res.pop("Periodicity.MagnitudeRatio.Weekly_AllOtherRanks", None)
    return {k: _scalar(v) for k, v in res.items()}


def stat_categorical(entries: Sequence[tuple]) -> dict[str, float | None]:
    """Fractions per value and HHI from (value, count) entries."""
    values = [v for v, _ in entries]
    counts = np.asarray([c for _, c in entries], dtype=float)
    total = counts.sum()
    if total <= 0:
        out: dict[str, float | None] = {f"Fraction.{v}": None for v in values}
        out["HHI"] = None
        return out
    fr = counts / total
    out = {f"Fraction.{v}": float(f) for v, f in zip(values, fr)}
    out["HHI"] = float((fr**2).sum())
    return out


def stat_contacts(
    out_counterparties: Sequence[str], in_counterparties: Sequence[str]
) -> dict[str, float | None]:
    """Degree, top-contact share, contact HHI, and returned-call fraction."""
    out_list = [c for c in out_counterparties if c]
    if not out_list:
        return {
            "Degree": None,
            "TopContactShare": None,
            "HHI": None,
            "Returned.Fraction": None,
        }
    vals, counts = np.unique(np.asarray(out_list), return_counts=True)
    shares = counts / counts.sum()
    in_set = set(c for c in in_counterparties if c)
    returned = sum(1 for v in vals if v in in_set)
    return {
        "Degree": float(len(vals)),
        "TopContactShare": float(shares.max()),
        "HHI": float((shares**2).sum()),
        "Returned.Fraction": float(returned / len(vals)),
    }


def stat_workday_holiday(
    measures: Sequence[float],
    is_workday: Sequence[bool],
    is_holiday: Sequence[bool],
) -> dict[str, float | None]:
    w = np.asarray(measures, dtype=float)
    total = w.sum()
    if total <= 0:
        return {"WorkDay.Fraction": None, "Holiday.Fraction": None}
    return {
        "WorkDay.Fraction": float(w[np.asarray(is_workday, dtype=bool)].sum() / total),
        "Holiday.Fraction": float(w[np.asarray(is_holiday, dtype=bool)].sum() / total),
    }


def great_circle_km(lat1, lon1, lat2, lon2, radius_km: float = EARTH_RADIUS_KM):
    """Great-circle distance on a sphere (haversine form)."""
    p1, l1, p2, l2 = map(np.radians, (lat1, lon1, lat2, lon2))
    a = np.sin((p2 - p1) / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin((l2 - l1) / 2) ** 2
    return 2.0 * radius_km * np.arcsin(np.minimum(1.0, np.sqrt(a)))


def single_linkage_clusters(points: np.ndarray, threshold_km: float) -> np.ndarray:
    """Union-find single-linkage clustering; returns cluster label per point."""
    n = len(points)
    parent = np.arange(n)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            d = great_circle_km(points[i, 0], points[i, 1], points[j, 0], points[j, 1])
            if d <= threshold_km:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[rj] = ri
    roots = np.array([find(i) for i in range(n)])
    _, labels = np.unique(roots, return_inverse=True)
    return labels


def stat_geo(
    location_set: LocationSet | None,
    pois: Sequence[tuple],
    observed_days: int,
    cluster_km: float = 1.0,
    important_days_fraction: float = 0.05,
) -> dict[str, float | None]:
    """Tower-geometry features: pairwise extent, centroid radius, POI
    distances, and the count of important place clusters."""
    out: dict[str, float | None] = {
        "TowerCount": None,
        "MaxPairwiseDistance": None,
        "RadiusFromCentroid": None,
        "ImportantPlaces.DaysUsed.Number": None,
    }
    for name, _, _ in pois:
        out[f"DistanceToPOI.{name}"] = None
    if location_set is None or not location_set.points:
        return out

    pts = np.asarray([(p[0], p[1]) for p in location_set.points], dtype=float)
    days = np.asarray([p[2] for p in location_set.points], dtype=float)
    events = np.asarray([p[3] for p in location_set.points], dtype=float)

    out["TowerCount"] = float(len(pts))
    centroid = (pts * events[:, None]).sum(axis=0) / events.sum()
    out["RadiusFromCentroid"] = float(
        np.max(great_circle_km(centroid[0], centroid[1], pts[:, 0], pts[:, 1]))
    )
    for name, plat, plon in pois:
        out[f"DistanceToPOI.{name}"] = float(
            great_circle_km(centroid[0], centroid[1], plat, plon)
        )
    if len(pts) >= 2:
        i, j = np.triu_indices(len(pts), k=1)
        out["MaxPairwiseDistance"] = float(
            np.max(great_circle_km(pts[i, 0], pts[i, 1], pts[j, 0], pts[j, 1]))
        )
    labels = single_linkage_clusters(pts, cluster_km)
    min_days = max(2, int(np.ceil(important_days_fraction * observed_days)))
    cluster_days = np.bincount(labels, weights=days)
    out["ImportantPlaces.DaysUsed.Number"] = float((cluster_days >= min_days).sum())
    return out


def stat_pairs(
    series_a: Sequence[float], series_b: Sequence[float], lags: Sequence[int] = (0, 1, 2)
) -> dict[str, float | None]:
    """Lagged correlations of A_t with B_{t-k}, plus the ratio of totals."""
    A = np.asarray(series_a, dtype=float)[None, :]
    B = np.asarray(series_b, dtype=float)[None, :]
    out: dict[str, float | None] = {}
    for lag in lags:
        if A.shape[1] <= lag:
            out[f"L0L{lag}.Correlation.Pearson"] = None
            out[f"L0L{lag}.Correlation.Spearman"] = None
            continue
        Asl = A[:, lag:]
        Bsl = B[:, : B.shape[1] - lag]
        out[f"L0L{lag}.Correlation.Pearson"] = _scalar(_row_pearson(Asl, Bsl))
        out[f"L0L{lag}.Correlation.Spearman"] = _scalar(_row_spearman(Asl, Bsl))
    sa, sb = float(np.nansum(A)), float(np.nansum(B))
    out["Ratio"] = (sa / sb) if sb != 0 else None
    return out


# ---------------------------------------------------------------------------
# matrix assembly
# ---------------------------------------------------------------------------

@dataclass
class FeatureMatrix:
    """Dense per-subscriber feature table; NaN marks missing values and each
    base column has an int companion "<name>.missing" flag."""

    frame: pd.DataFrame  # index: subscriber_id
    drop_log: list[str] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def feature_names(self) -> list[str]:
        return list(self.frame.columns)

    def value_columns(self) -> list[str]:
        return [c for c in self.frame.columns if not c.endswith(".missing")]

    def to_csv(self, path: str | Path) -> None:
        # shortest exact round-trip rendering of each float
        self.frame.to_csv(
            path,
            index=True,
            index_label="subscriber_id",
            float_format=lambda v: repr(float(v)),
        )

    def write_meta(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(canonical_json(jsonable(self.meta | {"drop_log": self.drop_log})))

    @classmethod
    def from_csv(cls, path: str | Path) -> "FeatureMatrix":
        frame = pd.read_csv(
            path, index_col="subscriber_id", float_precision="round_trip"
        )
        frame.index = frame.index.astype(str)
        return cls(frame=frame)


def _events_for_rows(
    store: CdrStore, row_of: dict, boundaries: pd.Series
) -> pd.DataFrame:
    frame = store.frame
    frame = frame[frame["subscriber_id"].isin(row_of)]
    bound = frame["subscriber_id"].map(boundaries)
    frame = frame[frame["timestamp"] < bound]
    frame = frame.assign(_row=frame["subscriber_id"].map(row_of).astype(np.int64))
    return frame


def _scatter_sum(
    frame: pd.DataFrame, n: int, mask: pd.Series, weights: np.ndarray
) -> np.ndarray:
    out = np.zeros(n)
    rows = frame.loc[mask, "_row"].to_numpy()
    np.add.at(out, rows, weights[mask.to_numpy()])
    return out


def _stream_weights(frame: pd.DataFrame, stream: str) -> tuple[pd.Series, np.ndarray]:
    etype, measure = STREAMS[stream]
    mask = frame["event_type"] == etype
    if measure == "COUNT":
        w = np.ones(len(frame))
    else:
        w = frame["duration_s"].fillna(0.0).to_numpy()
    return mask, w


def _categorical_block(
    frame: pd.DataFrame, n: int, stream: str, char: str, domain: list
) -> tuple[dict, np.ndarray]:
    """Fraction per domain value and HHI for one (stream, characteristic)."""
    mask, w = _stream_weights(frame, stream)
    sub = frame[mask]
    val_index = {v: j for j, v in enumerate(domain)}
    M = np.zeros((n, len(domain)))
    if len(sub):
        cols = sub[char].map(val_index)
        ok = cols.notna()
        np.add.at(
            M,
            (sub.loc[ok, "_row"].to_numpy(), cols[ok].astype(int).to_numpy()),
            w[mask.to_numpy()][ok.to_numpy()],
        )
    totals = M.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        fr = np.where(totals[:, None] > 0, M / totals[:, None], np.nan)
        hhi = np.where(totals > 0, (np.nan_to_num(fr) ** 2).sum(axis=1), np.nan)
    return ({v: fr[:, j] for v, j in val_index.items()}, hhi)


def _binary_fraction_block(
    frame: pd.DataFrame, n: int, stream: str, flag_column: str
) -> np.ndarray:
    mask, w = _stream_weights(frame, stream)
    total = _scatter_sum(frame, n, mask, w)
    flagged = _scatter_sum(frame, n, mask & frame[flag_column], w)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(total > 0, flagged / total, np.nan)


def _contacts_block(
    frame: pd.DataFrame, n: int, out_stream: str
) -> dict[str, np.ndarray]:
    out_type, _ = STREAMS[out_stream]
    in_type = out_type.replace("_OUT", "_IN")
    outgoing = frame[(frame["event_type"] == out_type) & frame["counterparty_id"].notna()]
    degree = np.full(n, np.nan)
    top = np.full(n, np.nan)
    hhi = np.full(n, np.nan)
    returned = np.full(n, np.nan)
    if len(outgoing):
        g = outgoing.groupby(["_row", "counterparty_id"], observed=True).size()
        per = g.groupby(level=0)
        rows = per.size().index.to_numpy()
        deg = per.size().to_numpy().astype(float)
        tot = per.sum().to_numpy().astype(float)
        mx = per.max().to_numpy().astype(float)
        sq = (g**2).groupby(level=0).sum().to_numpy().astype(float)
        degree[rows] = deg
        top[rows] = mx / tot
        hhi[rows] = sq / (tot**2)
        incoming = frame[
            (frame["event_type"] == in_type) & frame["counterparty_id"].notna()
        ]
        out_pairs = g.reset_index()[["_row", "counterparty_id"]]
        in_pairs = incoming[["_row", "counterparty_id"]].drop_duplicates()
        hits = out_pairs.merge(in_pairs, on=["_row", "counterparty_id"], how="inner")
        hit_counts = hits.groupby("_row").size()
        ret = np.zeros(len(rows))
        lookup = pd.Series(ret, index=rows)
        lookup.loc[hit_counts.index.intersection(lookup.index)] = hit_counts
        returned[rows] = lookup.to_numpy() / deg
    return {"Degree": degree, "TopContactShare": top, "HHI": hhi, "Returned": returned}


def assemble_matrix(
    taxonomy: TaxonomyConfig,
    store: CdrStore,
    loans: LoanTable,
    boundaries: pd.Series | None = None,
    drop_constant: bool = True,
    country_values: Sequence[str] | None = None,
) -> FeatureMatrix:
    """Evaluate the full taxonomy for every loan subscriber.

    boundaries optionally narrows each subscriber's series end (offset
    harness); default is the loan date. Subscribers with no events get
    all-missing phone features. External covariates are appended under the
    "Ext." namespace. Constant columns are dropped and logged.
    country_values pins the CounterpartyCountry domain (the offset harness
    passes the full-store domain so both halves share one column layout).
    """
    subs = [str(s) for s in loans.frame.index]
    row_of = {s: i for i, s in enumerate(subs)}
    n = len(subs)
    if boundaries is None:
        boundaries = loans.frame["loan_date"]
    boundaries = boundaries.reindex(loans.frame.index)

    frame = _events_for_rows(store, row_of, boundaries)
    if country_values is not None:
        observed_countries = sorted(country_values)
    else:
        observed_countries = sorted(frame["counterparty_country"].dropna().unique())
    if not observed_countries:
        observed_countries = ["UNKNOWN"]
    poi_names = [p[0] for p in store.calendar.points_of_interest]
    specs = taxonomy.specs(country_values=observed_countries, poi_names=poi_names)

    needed_streams = set(taxonomy.streams)
    for a, b in taxonomy.pair_streams:
        needed_streams.update((a, b))
    panel = build_series_panel(
        store, subs, boundaries, streams=sorted(needed_streams), buckets=taxonomy.buckets
    )

    columns: dict[str, np.ndarray] = {}

    for stream in taxonomy.streams:
        for bucket in taxonomy.buckets:
            block = _sequence_block(
                panel.matrices[(stream, bucket)], panel.lengths[bucket], bucket, taxonomy
            )
            for (tv, nz, stat), vec in block.items():
                columns[spec_name(("seq", stream, bucket, tv, nz, stat))] = vec

    totals: dict[str, np.ndarray] = {}
    for stream in sorted(needed_streams):
        mask, w = _stream_weights(frame, stream)
        totals[stream] = _scatter_sum(frame, n, mask, w)
    for a, b in taxonomy.pair_streams:
        for bucket in taxonomy.buckets:
            A = panel.matrices[(a, bucket)]
            B = panel.matrices[(b, bucket)]
            for lag in taxonomy.pair_lags:
                if A.shape[1] <= lag:
                    asl = A[:, :0]
                    bsl = B[:, :0]
                else:
                    asl = A[:, lag:]
                    bsl = B[:, : B.shape[1] - lag]
                for method in taxonomy.pair_methods:
                    f = _row_pearson if method == "Pearson" else _row_spearman
                    vec = (
                        f(asl, bsl)
                        if asl.shape[1]
                        else np.full(n, np.nan)
                    )
                    columns[spec_name(("pair", a, b, bucket, lag, method))] = vec
        with np.errstate(invalid="ignore", divide="ignore"):
            ratio = np.where(totals[b] != 0, totals[a] / totals[b], np.nan)
        columns[spec_name(("pair_ratio", a, b))] = ratio

    for stream in taxonomy.streams:
        for char in taxonomy.categorical_characteristics:
            domain = CHARACTERISTIC_DOMAINS[char]
            if domain is None:
                domain = observed_countries
            fractions, hhi = _categorical_block(frame, n, stream, char, list(domain))
            for v in domain:
                columns[spec_name(("cat", stream, char, v))] = fractions[v]
            columns[spec_name(("cat", stream, char, None))] = hhi

    flag_of = {
        "WorkDay": "is_workday",
        "Holiday": "is_holiday",
        "DiscountBand": "in_discount_band",
        "BandDiscontinuity": "at_band_discontinuity",
    }
    for stream in taxonomy.streams:
        for which in taxonomy.binary_fractions:
            columns[spec_name(("binfrac", stream, which))] = _binary_fraction_block(
                frame, n, stream, flag_of[which]
            )

    for stream in taxonomy.contacts_streams:
        block = _contacts_block(frame, n, stream)
        returned = "CallsReturned" if stream.startswith("Calls") else "SMSReturned"
        columns[spec_name(("contacts", stream, "Degree"))] = block["Degree"]
        columns[spec_name(("contacts", stream, "TopContactShare"))] = block[
            "TopContactShare"
        ]
        columns[spec_name(("contacts", stream, "HHI"))] = block["HHI"]
        columns[spec_name(("contacts", stream, f"{returned}.Fraction"))] = block[
            "Returned"
        ]

    if taxonomy.include_geo:
        sliced = CdrStore(
            frame=frame,
            window=store.window,
            calendar=store.calendar,
            report=store.report,
            clipped=store.clipped,
            loan_dates=store.loan_dates,
        )
        locations = build_locations(sliced)
        geo_cols = {spec_name(s): np.full(n, np.nan) for s in specs if s[0] == "geo"}
        pois = store.calendar.points_of_interest
        for sub in subs:
            i = row_of[sub]
            res = stat_geo(
                locations.get(sub),
                pois,
                observed_days=int(panel.day_count[i]),
                cluster_km=taxonomy.cluster_km,
                important_days_fraction=taxonomy.important_days_fraction,
            )
            for stat, value in res.items():
                name = f"Geography.{stat}"
                if name in geo_cols and value is not None:
                    geo_cols[name][i] = value
        columns.update(geo_cols)

    # a subscriber with an empty clipped history has no phone features at
    # all (all flagged missing), not zero-activity series statistics
    active = np.zeros(n, dtype=bool)
    active[frame["_row"].unique()] = True

    ordered_names = [spec_name(s) for s in specs]
    for name in ordered_names:
        columns[name] = np.where(active, columns[name], np.nan)
    values = pd.DataFrame(
        {name: columns[name] for name in ordered_names},
        index=pd.Index(subs, name="subscriber_id"),
    )
    flags = values.isna().astype(np.int8)
    flags.columns = [f"{c}.missing" for c in values.columns]

    ext = loans.frame[loans.covariate_names].copy()
    ext.columns = [f"Ext.{c}" for c in ext.columns]
    ext.index = values.index
    ext_flags = ext.isna().astype(np.int8)
    ext_flags.columns = [f"{c}.missing" for c in ext.columns]

    full = pd.concat([values, flags, ext, ext_flags], axis=1)

    drop_log = []
    if drop_constant:
        keep = []
        for col in full.columns:
            arr = full[col].to_numpy(dtype=float)
            nan_mask = np.isnan(arr)
            # constant = no variation at all; a column that is constant on
            # its non-missing rows but has missing cells is retained
            if nan_mask.all():
                drop_log.append(col)
            elif not nan_mask.any() and (arr == arr[0]).all():
                drop_log.append(col)
            else:
                keep.append(col)
        pruned = full[keep]
    else:
        pruned = full

    meta = {
        "taxonomy_hash": taxonomy.hash(),
        "columns_generated": int(full.shape[1]),
        "columns_retained": int(pruned.shape[1]),
        "columns_dropped": len(drop_log),
        "rows": n,
        "window": [str(store.window[0]), str(store.window[1])],
        "country_domain": observed_countries,
        "poi_names": poi_names,
    }
    return FeatureMatrix(frame=pruned, drop_log=drop_log, meta=meta)
