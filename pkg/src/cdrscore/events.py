"""Canonical event store: parse, validate, and normalize transaction logs.

Input formats (UTF-8 CSV with header, empty string = absent):
  events.csv  subscriber_id,timestamp,event_type,duration_s,counterparty_id,
              counterparty_account,counterparty_country,tower_lat,tower_lon
  loans.csv   subscriber_id,loan_date,default[,covariate...]

Timestamps are ISO-8601 and interpreted as UTC. The observation window is
half-open [start, end).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

# Call/SMS/tower rows produce features; the remaining types are reserved for
# richer datasets and yield no features by default.
EVENT_TYPES = (
    "CALL_OUT",
    "CALL_IN",
    "SMS_OUT",
    "SMS_IN",
    "TOWER_PING",
    "TOP_UP",
    "DATA_USE",
    "BALANCE_INQUIRY",
    "DEVICE_SWITCH",
)
DURATION_TYPES = ("CALL_OUT", "CALL_IN")
ACCOUNT_VALUES = ("PREPAID", "POSTPAID", "UNKNOWN")

EVENT_COLUMNS = [
    "subscriber_id",
    "timestamp",
    "event_type",
    "duration_s",
    "counterparty_id",
    "counterparty_account",
    "counterparty_country",
    "tower_lat",
    "tower_lon",
]

CHARACTERISTIC_COLUMNS = [
    "day_of_week",
    "hour_of_day",
    "is_holiday",
    "is_workday",
    "days_until_loan",
    "in_discount_band",
    "at_band_discontinuity",
]


class CdrError(Exception):
    pass


class IngestError(CdrError):
    """Raised in strict mode when rows fail validation; carries (line, message) pairs."""

    def __init__(self, errors: list[tuple[int, str]]):
        self.errors = errors
        shown = "; ".join(f"line {ln}: {msg}" for ln, msg in errors[:20])
        extra = "" if len(errors) <= 20 else f" (+{len(errors) - 20} more)"
        super().__init__(f"{len(errors)} malformed row(s): {shown}{extra}")


class LoanError(CdrError):
    pass


class OrphanSubscriberError(CdrError):
    def __init__(self, ids: Sequence[str]):
        self.ids = list(ids)
        shown = ", ".join(self.ids[:20])
        extra = "" if len(self.ids) <= 20 else f" (+{len(self.ids) - 20} more)"
        super().__init__(f"{len(self.ids)} store subscriber(s) missing from loans: {shown}{extra}")


def _parse_minutes(text: str) -> int:
    hh, mm = text.split(":")
    h, m = int(hh), int(mm)
    if not (0 <= h <= 23 and 0 <= m <= 59):
        raise ValueError(f"bad time of day {text!r}")
    return 60 * h + m


@dataclass(frozen=True)
class CalendarConfig:
    """Holidays, workday set, discount time bands, and points of interest.

    Bands are [start, end) in minutes of day and may wrap past midnight;
    they must not overlap. The margin defines how close to a band edge an
    event must be to count as at a discontinuity.
    """

    holidays: frozenset = frozenset()  # of datetime.date
    workdays: frozenset = frozenset({0, 1, 2, 3, 4})  # Monday=0
    discount_bands: tuple = ()  # of (start_minute, end_minute)
    band_margin_minutes: float = 5.0
    points_of_interest: tuple = ()  # of (name, lat, lon)

    def __post_init__(self):
        if self.band_margin_minutes <= 0:
            raise ValueError("band margin must be > 0")
        covered = np.zeros(1440, dtype=bool)
        for start, end in self.discount_bands:
            idx = self._band_indices(start, end)
            if covered[idx].any():
                raise ValueError("discount bands overlap")
            covered[idx] = True

    @staticmethod
    def _band_indices(start: int, end: int) -> np.ndarray:
        if start == end:
            raise ValueError("zero-length discount band")
        if start < end:
            return np.arange(start, end)
        return np.concatenate([np.arange(start, 1440), np.arange(0, end)])

    def in_band(self, minutes: np.ndarray) -> np.ndarray:
        out = np.zeros(len(minutes), dtype=bool)
        for start, end in self.discount_bands:
            if start < end:
                out |= (minutes >= start) & (minutes < end)
            else:
                out |= (minutes >= start) | (minutes < end)
        return out

    def at_discontinuity(self, minutes: np.ndarray) -> np.ndarray:
        out = np.zeros(len(minutes), dtype=bool)
        for start, end in self.discount_bands:
            for edge in (start, end):
                diff = np.abs(minutes - edge)
                circ = np.minimum(diff, 1440 - diff)
                out |= circ <= self.band_margin_minutes
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "CalendarConfig":
        holidays = frozenset(pd.Timestamp(h).date() for h in d.get("holidays", []))
        workdays = frozenset(int(w) for w in d.get("workdays", [0, 1, 2, 3, 4]))
        bands = tuple(
            (_parse_minutes(str(a)), _parse_minutes(str(b)))
            for a, b in d.get("discount_bands", [])
        )
        pois = tuple(
            (str(p[0]), float(p[1]), float(p[2])) for p in d.get("points_of_interest", [])
        )
        return cls(
            holidays=holidays,
            workdays=workdays,
            discount_bands=bands,
            band_margin_minutes=float(d.get("band_margin_minutes", 5.0)),
            points_of_interest=pois,
        )

    @classmethod
    def from_json(cls, path: str | Path) -> "CalendarConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {
            "holidays": sorted(str(h) for h in self.holidays),
            "workdays": sorted(self.workdays),
            "discount_bands": [
                [f"{s // 60:02d}:{s % 60:02d}", f"{e // 60:02d}:{e % 60:02d}"]
                for s, e in self.discount_bands
            ],
            "band_margin_minutes": self.band_margin_minutes,
            "points_of_interest": [list(p) for p in self.points_of_interest],
        }


@dataclass
class IngestReport:
    rows_read: int = 0
    rows_kept: int = 0
    rows_excluded_window: int = 0
    rows_skipped: int = 0
    duplicates_dropped: int = 0
    errors: list = field(default_factory=list)  # (line, message), capped

    def summary(self) -> str:
        return (
            f"read={self.rows_read} kept={self.rows_kept} "
            f"window_excluded={self.rows_excluded_window} "
            f"skipped={self.rows_skipped} duplicates={self.duplicates_dropped}"
        )


@dataclass
class CdrStore:
    """Immutable canonical event store, sorted by (subscriber_id, timestamp)."""

    frame: pd.DataFrame
    window: tuple  # (Timestamp, Timestamp), UTC, half-open
    calendar: CalendarConfig
    report: IngestReport
    clipped: bool = False
    loan_dates: pd.Series | None = None  # subscriber -> loan Timestamp, set by clip

    def __len__(self) -> int:
        return len(self.frame)

    def subscribers(self) -> list[str]:
        return self.frame["subscriber_id"].drop_duplicates().tolist()

    def events_for(self, subscriber_id: str) -> pd.DataFrame:
        return self.frame[self.frame["subscriber_id"] == subscriber_id]

    def canonical_csv(self) -> str:
        """Byte-stable rendering of the store, used by the idempotence contract."""
        out = self.frame.copy()
        out["timestamp"] = out["timestamp"].dt.strftime("%Y-%m-%dT%H:%M:%SZ")
        return out.to_csv(index=False)


def _validate_chunk(
    chunk: pd.DataFrame, first_line: int
) -> tuple[pd.DataFrame, list[tuple[int, str]]]:
    """Vectorized per-row validation; returns (parsed frame, errors)."""
    n = len(chunk)
    lines = np.arange(first_line, first_line + n)
    bad = {}

    def flag(mask: pd.Series | np.ndarray, message: str):
        for ln in lines[np.asarray(mask)]:
            bad.setdefault(int(ln), message)

    sub = chunk["subscriber_id"].astype(str)
    flag(sub.str.len() == 0, "empty subscriber_id")

    ts = pd.to_datetime(chunk["timestamp"], errors="coerce", utc=True, format="ISO8601")
    flag(ts.isna().to_numpy(), "unparseable timestamp")

    etype = chunk["event_type"].astype(str)
    flag(~etype.isin(EVENT_TYPES).to_numpy(), "unknown event_type")

    dur_text = chunk["duration_s"].astype(str)
    dur = pd.to_numeric(dur_text, errors="coerce")  # "" coerces to NaN
    has_dur_text = dur_text.str.len() > 0
    flag((has_dur_text & dur.isna()).to_numpy(), "non-numeric duration")
    flag((dur < 0).fillna(False).to_numpy(), "negative duration")
    is_call = etype.isin(DURATION_TYPES)
    flag((is_call & ~has_dur_text).to_numpy(), "call row missing duration")
    flag((~is_call & has_dur_text).to_numpy(), "duration on non-call row")

    acct = chunk["counterparty_account"].astype(str).replace("", "UNKNOWN")
    flag(~acct.isin(ACCOUNT_VALUES).to_numpy(), "bad counterparty_account")

    country = chunk["counterparty_country"].astype(str).replace("", "UNKNOWN")
    ok_country = (country == "UNKNOWN") | country.str.fullmatch(r"[A-Z]{2}")
    flag(~ok_country.to_numpy(), "bad counterparty_country")

    lat = pd.to_numeric(chunk["tower_lat"], errors="coerce")
    lon = pd.to_numeric(chunk["tower_lon"], errors="coerce")
    has_lat_text = chunk["tower_lat"].astype(str).str.len() > 0
    has_lon_text = chunk["tower_lon"].astype(str).str.len() > 0
    flag((has_lat_text & lat.isna()).to_numpy(), "non-numeric tower_lat")
    flag((has_lon_text & lon.isna()).to_numpy(), "non-numeric tower_lon")
    flag((has_lat_text ^ has_lon_text).to_numpy(), "tower coordinates must come in pairs")
    flag((lat.abs() > 90).fillna(False).to_numpy(), "tower_lat out of range")
    flag((lon.abs() > 180).fillna(False).to_numpy(), "tower_lon out of range")

    parsed = pd.DataFrame(
        {
            "subscriber_id": sub,
            "timestamp": ts,
            "event_type": etype,
            "duration_s": dur.astype(float),
            "counterparty_id": chunk["counterparty_id"].astype(str).replace("", None),
            "counterparty_account": acct,
            "counterparty_country": country,
            "tower_lat": lat.astype(float),
            "tower_lon": lon.astype(float),
            "_line": lines,
        }
    )
    if bad:
        keep = ~parsed["_line"].isin(list(bad))
        parsed = parsed[keep]
    errors = sorted(bad.items())
    return parsed, errors


def derive_characteristics(
    frame: pd.DataFrame, calendar: CalendarConfig, until: pd.Series | pd.Timestamp
) -> pd.DataFrame:
    """Populate the derived per-event characteristic columns.

    `until` is the reference instant for days_until_loan: the actual loan
    date once known, else the window end (provisional).
    """
    ts = frame["timestamp"]
    frame = frame.copy()
    frame["day_of_week"] = ts.dt.dayofweek.astype(np.int8)
    frame["hour_of_day"] = ts.dt.hour.astype(np.int8)
    dates = ts.dt.date
    holidays = calendar.holidays
    frame["is_holiday"] = dates.map(lambda d: d in holidays).astype(bool)
    workday = ts.dt.dayofweek.isin(sorted(calendar.workdays))
    frame["is_workday"] = (workday & ~frame["is_holiday"]).astype(bool)
    if isinstance(until, pd.Timestamp):
        ref = pd.Series(until, index=frame.index)
    else:
        ref = until
    frame["days_until_loan"] = (
        (ref.dt.normalize() - ts.dt.normalize()).dt.days.astype(np.int64)
    )
    minutes = (ts.dt.hour * 60 + ts.dt.minute).to_numpy()
    frame["in_discount_band"] = calendar.in_band(minutes)
    frame["at_band_discontinuity"] = calendar.at_discontinuity(minutes)
    return frame


def _canonical_sort(frame: pd.DataFrame) -> pd.DataFrame:
    frame = frame.sort_values(
        ["subscriber_id", "timestamp", "event_type", "counterparty_id"],
        kind="stable",
        na_position="last",
    )
    return frame.reset_index(drop=True)


def ingest_events(
    path: str | Path,
    window: tuple,
    calendar: CalendarConfig,
    on_error: str = "fail",
    chunksize: int = 500_000,
) -> CdrStore:
    """Parse events.csv into a canonical sorted store.

    window is (start, end) UTC instants, half-open. on_error: "fail" raises
    IngestError on the first malformed row batch; "skip" drops bad rows and
    counts them in the report.
    """
    start, end = (pd.Timestamp(window[0]), pd.Timestamp(window[1]))
    if start.tzinfo is None:
        start = start.tz_localize("UTC")
    if end.tzinfo is None:
        end = end.tz_localize("UTC")
    if not start < end:
        raise ValueError("observation window must satisfy start < end")
    if on_error not in ("fail", "skip"):
        raise ValueError("on_error must be 'fail' or 'skip'")

    report = IngestReport()
    parts = []
    reader = pd.read_csv(
        path, dtype=str, keep_default_na=False, chunksize=chunksize, encoding="utf-8"
    )
    first_line = 2  # line 1 is the header
    for chunk in reader:
        missing = [c for c in EVENT_COLUMNS if c not in chunk.columns]
        if missing:
            raise IngestError([(1, f"missing column(s): {', '.join(missing)}")])
        report.rows_read += len(chunk)
        parsed, errors = _validate_chunk(chunk, first_line)
        first_line += len(chunk)
        if errors:
            if on_error == "fail":
                raise IngestError(errors)
            report.rows_skipped += len(errors)
            report.errors.extend(errors[: max(0, 1000 - len(report.errors))])
        parts.append(parsed)

    frame = (
        pd.concat(parts, ignore_index=True)
        if parts
        else pd.DataFrame(columns=EVENT_COLUMNS + ["_line"])
    )

    in_window = (frame["timestamp"] >= start) & (frame["timestamp"] < end)
    report.rows_excluded_window = int((~in_window).sum())
    frame = frame[in_window]

    before = len(frame)
    frame = frame.drop_duplicates(subset=EVENT_COLUMNS, keep="first")
    report.duplicates_dropped = before - len(frame)

    frame = frame.drop(columns=["_line"])
    frame = derive_characteristics(frame, calendar, until=end)
    frame = _canonical_sort(frame)
    report.rows_kept = len(frame)
    return CdrStore(frame=frame, window=(start, end), calendar=calendar, report=report)


@dataclass
class LoanTable:
    """Loans keyed by subscriber: grant date, default flag, optional covariates."""

    frame: pd.DataFrame  # index subscriber_id; loan_date, default + covariate columns

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def covariate_names(self) -> list[str]:
        return [c for c in self.frame.columns if c not in ("loan_date", "default")]

    def default_rate(self) -> float:
        return float(self.frame["default"].mean())

    def loan_dates(self) -> pd.Series:
        return self.frame["loan_date"]

    def labels(self) -> pd.Series:
        return self.frame["default"]


def ingest_loans(path: str | Path) -> LoanTable:
    raw = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    for col in ("subscriber_id", "loan_date", "default"):
        if col not in raw.columns:
            raise LoanError(f"loans file missing column {col!r}")
    dupes = raw["subscriber_id"][raw["subscriber_id"].duplicated()].unique()
    if len(dupes):
        raise LoanError(f"duplicate subscriber_id(s): {', '.join(dupes[:10])}")

    loan_date = pd.to_datetime(raw["loan_date"], errors="coerce", utc=True)
    if loan_date.isna().any():
        bad = raw.loc[loan_date.isna(), "subscriber_id"].iloc[0]
        raise LoanError(f"unparseable loan_date for subscriber {bad}")

    default = pd.to_numeric(raw["default"], errors="coerce")
    ok = default.isin((0, 1))
    if not ok.all():
        bad = raw.loc[~ok, "subscriber_id"].iloc[0]
        raise LoanError(f"default outside {{0,1}} for subscriber {bad}")

    index = pd.Index(raw["subscriber_id"].to_numpy(), name="subscriber_id")
    frame = pd.DataFrame(
        {
            "loan_date": loan_date.dt.normalize().set_axis(index),
            "default": default.astype(np.int8).set_axis(index),
        }
    )
    covariates = [
        c for c in raw.columns if c not in ("subscriber_id", "loan_date", "default")
    ]
    for c in covariates:
        vals = pd.to_numeric(raw[c], errors="coerce")
        nonempty = raw[c].str.len() > 0
        if (nonempty & vals.isna()).any():
            raise LoanError(f"non-numeric covariate value in column {c!r}")
        frame[c] = vals.to_numpy()  # NaN = absent, never zero-filled
    return LoanTable(frame=frame)


def clip_to_loan(
    store: CdrStore, loans: LoanTable, permissive: bool = False
) -> CdrStore:
    """Retain only events strictly before the owning subscriber's loan date."""
    frame = store.frame
    known = frame["subscriber_id"].isin(loans.frame.index)
    if not known.all():
        orphans = frame.loc[~known, "subscriber_id"].drop_duplicates().tolist()
        if not permissive:
            raise OrphanSubscriberError(orphans)
        frame = frame[known]

    loan_dates = loans.frame["loan_date"]
    per_event_loan = frame["subscriber_id"].map(loan_dates)
    frame = frame[frame["timestamp"] < per_event_loan]

    per_event_loan = frame["subscriber_id"].map(loan_dates)
    frame = frame.copy()
    frame["days_until_loan"] = (
        (per_event_loan.dt.normalize() - frame["timestamp"].dt.normalize())
        .dt.days.astype(np.int64)
    )
    frame = _canonical_sort(frame)
    report = IngestReport(rows_read=len(store.frame), rows_kept=len(frame))
    return CdrStore(
        frame=frame,
        window=store.window,
        calendar=store.calendar,
        report=report,
        clipped=True,
        loan_dates=loan_dates,
    )
