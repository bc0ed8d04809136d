import csv
from pathlib import Path

import pandas as pd
import pytest

from cdrscore.events import EVENT_COLUMNS, CalendarConfig, ingest_events, ingest_loans


def write_events_csv(path, rows):
    """rows: list of dicts keyed by events.csv columns (missing keys -> '')."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=EVENT_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({c: row.get(c, "") for c in EVENT_COLUMNS})


def write_loans_csv(path, rows, covariates=()):
    cols = ["subscriber_id", "loan_date", "default"] + list(covariates)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=cols)
        writer.writeheader()
        for row in rows:
            writer.writerow({c: row.get(c, "") for c in cols})


def event(sub, ts, etype, dur=None, cp=None, acct="", country="", lat=None, lon=None):
    return {
        "subscriber_id": sub,
        "timestamp": ts,
        "event_type": etype,
        "duration_s": "" if dur is None else dur,
        "counterparty_id": cp or "",
        "counterparty_account": acct,
        "counterparty_country": country,
        "tower_lat": "" if lat is None else lat,
        "tower_lon": "" if lon is None else lon,
    }


DEFAULT_WINDOW = ("2016-01-04T00:00:00Z", "2016-06-27T00:00:00Z")  # both Mondays


@pytest.fixture
def calendar_plain():
    return CalendarConfig()


@pytest.fixture
def make_store(tmp_path, calendar_plain):
    def build(rows, window=DEFAULT_WINDOW, calendar=None, on_error="fail"):
        path = tmp_path / "events.csv"
        write_events_csv(path, rows)
        return ingest_events(
            path, window, calendar or calendar_plain, on_error=on_error
        )

    return build


@pytest.fixture
def make_loans(tmp_path):
    def build(rows, covariates=()):
        path = tmp_path / "loans.csv"
        write_loans_csv(path, rows, covariates)
        return ingest_loans(path)

    return build
