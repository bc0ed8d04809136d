"""Second-stage objects: per-characteristic count vectors, bucketed series,
and tower location tallies.

Series are loan-relative: buckets run from the window start up to each
subscriber's loan date, and WEEK/30-day series keep only whole buckets
counted backward from the loan so the bucket adjacent to the loan is always
complete (the partial remainder at the window-start end is dropped).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .events import CdrStore, EVENT_TYPES, ACCOUNT_VALUES

# stream name -> (event_type, measure)
STREAMS: dict[str, tuple[str, str]] = {
    "Calls.Out": ("CALL_OUT", "COUNT"),
    "Calls.In": ("CALL_IN", "COUNT"),
    "SMS.Out": ("SMS_OUT", "COUNT"),
    "SMS.In": ("SMS_IN", "COUNT"),
    "Duration.Out": ("CALL_OUT", "DURATION_SUM"),
    "Duration.In": ("CALL_IN", "DURATION_SUM"),
}

BUCKETS: dict[str, int] = {"Day": 1, "Week": 7, "30Day": 30}

# Aggregation characteristics with canonical value ordering. None means the
# domain is taken from the data (sorted ascending).
CHARACTERISTIC_DOMAINS: dict[str, list | None] = {
    "day_of_week": list(range(7)),
    "hour_of_day": list(range(24)),
    "is_holiday": [False, True],
    "is_workday": [False, True],
    "in_discount_band": [False, True],
    "at_band_discontinuity": [False, True],
    "counterparty_account": list(ACCOUNT_VALUES),
    "counterparty_country": None,
    "counterparty_id": None,
    "days_until_loan": None,
}


@dataclass
class AggregateVector:
    """Counts (or duration sums) of one subscriber's events per value of one
    characteristic."""

    subscriber_id: str
    event_type: str
    characteristic: str
    measure: str  # COUNT | DURATION_SUM
    entries: list  # [(value, number)], canonical value order

    @property
    def total(self) -> float:
        return float(sum(v for _, v in self.entries))


@dataclass
class TimeSeries:
    subscriber_id: str
    stream: str
    bucket: str
    values: np.ndarray

    @property
    def degenerate(self) -> bool:
        return len(self.values) == 0


@dataclass
class LocationSet:
    subscriber_id: str
    points: list  # [(lat, lon, distinct_days, event_count)]


def _canonical_values(characteristic: str, observed: Iterable) -> list:
    domain = CHARACTERISTIC_DOMAINS[characteristic]
    if domain is not None:
        return list(domain)
    return sorted(set(observed))


def build_aggregates(
    store: CdrStore, spec: Sequence[tuple[str, str, str]]
) -> list[AggregateVector]:
    """One AggregateVector per (subscriber, event_type, characteristic,
    measure) with at least one event. Entry values are the subscriber's
    observed values, in canonical order."""
    for event_type, characteristic, measure in spec:
        if event_type not in EVENT_TYPES:
            raise ValueError(f"unknown event type {event_type!r}")
        if characteristic not in CHARACTERISTIC_DOMAINS:
            raise ValueError(f"unknown characteristic {characteristic!r}")
        if measure not in ("COUNT", "DURATION_SUM"):
            raise ValueError(f"unknown measure {measure!r}")

    frame = store.frame
    out: list[AggregateVector] = []
    for event_type, characteristic, measure in spec:
        rows = frame[frame["event_type"] == event_type]
        if rows.empty:
            continue
        if measure == "COUNT":
            grouped = rows.groupby(["subscriber_id", characteristic], observed=True).size()
        else:
            grouped = rows.groupby(["subscriber_id", characteristic], observed=True)[
                "duration_s"
            ].sum()
        per_sub: dict[str, dict] = {}
        for (sub, value), number in grouped.items():
            per_sub.setdefault(sub, {})[value] = float(number)
        for sub in sorted(per_sub):
            values = per_sub[sub]
            order = [v for v in _canonical_values(characteristic, values) if v in values]
            out.append(
                AggregateVector(
                    subscriber_id=sub,
                    event_type=event_type,
                    characteristic=characteristic,
                    measure=measure,
                    entries=[(v, values[v]) for v in order],
                )
            )
    return out


@dataclass
class SeriesPanel:
    """Dense, NaN-padded per-(stream, bucket) matrices across subscribers.

    matrices[(stream, bucket)] has one row per subscriber (in `subscribers`
    order); row i holds that subscriber's series in columns [0, lengths[i])
    and NaN beyond. Zero-activity buckets are explicit zeros.
    """

    subscribers: list[str]
    matrices: dict  # (stream, bucket) -> ndarray (n, T_max)
    lengths: dict  # bucket -> ndarray (n,) of int
    day_count: np.ndarray  # (n,) days between window start and boundary

    def series(self, subscriber_id: str, stream: str, bucket: str) -> TimeSeries:
        i = self.subscribers.index(subscriber_id)
        m = self.matrices[(stream, bucket)]
        L = int(self.lengths[bucket][i])
        return TimeSeries(subscriber_id, stream, bucket, m[i, :L].copy())


def build_series_panel(
    store: CdrStore,
    subscribers: Sequence[str],
    boundaries: pd.Series,
    streams: Sequence[str] | None = None,
    buckets: Sequence[str] | None = None,
) -> SeriesPanel:
    """Vectorized series construction for all subscribers at once.

    boundaries maps subscriber -> exclusive end instant of their series
    (normally the loan date; the offset harness narrows it to a half-window
    edge). Events at/after a subscriber's boundary must already be clipped.
    """
    streams = list(streams or STREAMS)
    buckets = list(buckets or BUCKETS)
    subs = list(subscribers)
    n = len(subs)
    row_of = {s: i for i, s in enumerate(subs)}

    start_day = store.window[0].normalize()
    bounds = pd.to_datetime(boundaries.reindex(subs))
    day_count = np.maximum(
        (bounds.dt.normalize() - start_day).dt.days.to_numpy(dtype=np.int64), 0
    )

    frame = store.frame
    keep = frame["subscriber_id"].isin(row_of)
    frame = frame[keep]
    ev_row = frame["subscriber_id"].map(row_of).to_numpy(dtype=np.int64)
    ev_day = (frame["timestamp"].dt.normalize() - start_day).dt.days.to_numpy(np.int64)
    ev_type = frame["event_type"].to_numpy()
    ev_dur = frame["duration_s"].to_numpy(dtype=np.float64)

    lengths = {}
    for bucket in buckets:
        width = BUCKETS[bucket]
        lengths[bucket] = day_count // width

    matrices = {}
    for bucket in buckets:
        width = BUCKETS[bucket]
        L = lengths[bucket]
        t_max = int(L.max()) if n else 0
        # chronological column of each event: whole buckets counted back
        # from the boundary, partial head bucket excluded
        sub_days = day_count[ev_row]
        offset = sub_days - 1 - ev_day
        w = offset // width
        col = L[ev_row] - 1 - w
        valid_day = (ev_day >= 0) & (ev_day < sub_days)
        in_whole = valid_day & (w >= 0) & (w < L[ev_row])
        base = np.zeros((n, t_max), dtype=np.float64)
        if t_max:
            pad = np.arange(t_max)[None, :] >= L[:, None]
            base[pad] = np.nan
        for stream in streams:
            etype, measure = STREAMS[stream]
            m = base.copy()
            mask = in_whole & (ev_type == etype)
            if mask.any():
                vals = (
                    np.ones(mask.sum(), dtype=np.float64)
                    if measure == "COUNT"
                    else ev_dur[mask]
                )
                np.add.at(m, (ev_row[mask], col[mask]), vals)
            matrices[(stream, bucket)] = m

    return SeriesPanel(
        subscribers=subs, matrices=matrices, lengths=lengths, day_count=day_count
    )


def build_series(
    store: CdrStore,
    streams: Sequence[str] | None = None,
    buckets: Sequence[str] | None = None,
) -> list[TimeSeries]:
    """Contract-level series builder over a clipped store (one TimeSeries per
    subscriber x stream x bucket; zero-length series are degenerate)."""
    if store.loan_dates is None:
        raise ValueError("build_series requires a clipped store with loan dates")
    subs = [s for s in store.loan_dates.index if True]
    panel = build_series_panel(store, subs, store.loan_dates, streams, buckets)
    out = []
    for stream in streams or STREAMS:
        for bucket in buckets or BUCKETS:
            for sub in subs:
                out.append(panel.series(sub, stream, bucket))
    return out


def build_locations(store: CdrStore) -> dict[str, LocationSet]:
    """Unique tower points per subscriber with event and distinct-day tallies."""
    frame = store.frame
    located = frame[frame["tower_lat"].notna() & frame["tower_lon"].notna()]
    out: dict[str, LocationSet] = {}
    if located.empty:
        return out
    located = located.assign(_day=located["timestamp"].dt.normalize())
    grouped = located.groupby(["subscriber_id", "tower_lat", "tower_lon"], sort=True)
    stats = grouped.agg(events=("timestamp", "size"), days=("_day", "nunique"))
    for (sub, lat, lon), row in stats.iterrows():
        out.setdefault(sub, LocationSet(sub, [])).points.append(
            (float(lat), float(lon), int(row["days"]), int(row["events"]))
        )
    return out


def dump_debug_csv(
    path: str | Path,
    aggregates: Sequence[AggregateVector] = (),
    series: Sequence[TimeSeries] = (),
) -> None:
    """Flat (subscriber_id, name, index, value) dump for oracle cross-checks."""
    rows = []
    for vec in aggregates:
        name = f"{vec.event_type}.{vec.characteristic}.{vec.measure}"
        for value, number in vec.entries:
            rows.append((vec.subscriber_id, name, str(value), number))
    for ts in series:
        name = f"{ts.stream}.{ts.bucket}"
        for i, v in enumerate(ts.values):
            rows.append((ts.subscriber_id, name, str(i), float(v)))
    pd.DataFrame(rows, columns=["subscriber_id", "name", "index", "value"]).to_csv(
        path, index=False
    )
