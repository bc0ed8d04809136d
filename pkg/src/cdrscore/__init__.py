"""Behavioral credit scoring from mobile phone transaction logs."""

__version__ = "0.1.0"

from .events import (
    CalendarConfig,
    CdrStore,
    IngestError,
    LoanTable,
    OrphanSubscriberError,
    clip_to_loan,
    ingest_events,
    ingest_loans,
)
from .aggregate import build_aggregates, build_locations, build_series
from .taxonomy import TaxonomyConfig, parse_feature_name
from .features import FeatureMatrix, assemble_matrix

__all__ = [
    "CalendarConfig",
    "CdrStore",
    "IngestError",
    "LoanTable",
    "OrphanSubscriberError",
    "clip_to_loan",
    "ingest_events",
    "ingest_loans",
    "build_aggregates",
    "build_locations",
    "build_series",
    "TaxonomyConfig",
    "parse_feature_name",
    "FeatureMatrix",
    "assemble_matrix",
]
