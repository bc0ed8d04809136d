"""Feature taxonomy: enumerates canonical dotted feature names and parses
them back into computation specs.

Name grammar, by family:
  sequence     Stream.Bucket[.TimeVariant][.NonZero].Stat
  pair         (StreamA StreamB) ByBucketL0L<k>.Correlation.<Method>
               (StreamA StreamB) Ratio
  categorical  Stream.By<Characteristic>.Fraction.<Value> | .HHI
  calendar     Stream.{WorkDay|Holiday|DiscountBand|BandDiscontinuity}.Fraction
  contacts     Stream.Contacts.<Stat>
  geography    Geography.<Stat>[.<POI>]
  external     Ext.<column>
Every name may additionally carry a ".missing" suffix for the companion
indicator column.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from .aggregate import BUCKETS, STREAMS
from .util import config_hash

TIME_VARIANTS = ("", "AfterFirst", "BetweenFirstAndLast")

DOW_LABELS = ("Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun")

CATEGORICAL_LABELS = {
    "day_of_week": "DayOfWeek",
    "hour_of_day": "HourOfDay",
    "counterparty_account": "CounterpartyAccount",
    "counterparty_country": "CounterpartyCountry",
}

BINARY_FRACTIONS = ("WorkDay", "Holiday", "DiscountBand", "BandDiscontinuity")

GEO_STATS = (
    "TowerCount",
    "MaxPairwiseDistance",
    "RadiusFromCentroid",
    "ImportantPlaces.DaysUsed.Number",
)

_QUANTILE_RE = re.compile(r"^Q(\d+)$")
_SPREAD_RE = re.compile(r"^Q(\d+)minusQ(\d+)$")
_AUTOCORR_RE = re.compile(r"^AutoCorrelation\.L(\d+)\.(Pearson|Spearman)$")
_PERIOD_MAG_RE = re.compile(r"^Periodicity\.Magnitude\.Rank(\d+)$")
_PAIR_RE = re.compile(r"^\((\S+) (\S+)\) (.+)$")
_PAIR_CORR_RE = re.compile(r"^By(\w+)L0L(\d+)\.Correlation\.(Pearson|Spearman)$")
_CAT_RE = re.compile(r"^By([A-Za-z]+)\.(Fraction\.(.+)|HHI)$")

PERIODICITY_RATIOS = (
    "Periodicity.MagnitudeRatio.Rank0_Rank2",
    "Periodicity.MagnitudeRatio.Rank0_AllOtherRanks",
    "Periodicity.MagnitudeRatio.Weekly_AllOtherRanks",
    "Periodicity.MagnitudeDifference.Rank0_Rank1",
)


def value_label(characteristic: str, value) -> str:
    if characteristic == "day_of_week":
        return DOW_LABELS[int(value)]
    if characteristic == "hour_of_day":
        return f"H{int(value)}"
    return str(value)


def label_value(characteristic: str, label: str):
    if characteristic == "day_of_week":
        return DOW_LABELS.index(label)
    if characteristic == "hour_of_day":
        return int(label[1:])
    return label


@dataclass(frozen=True)
class TaxonomyConfig:
    """Knobs controlling which feature families are generated."""

    streams: tuple = tuple(STREAMS)
    buckets: tuple = tuple(BUCKETS)
    time_variants: tuple = TIME_VARIANTS
    include_nonzero: bool = True
    quantiles: tuple = (20, 40, 50, 60, 80)
    spreads: tuple = ((80, 50), (50, 20), (60, 40))
    autocorr_lags: tuple = (("Day", (1, 2, 7)), ("Week", (1, 2)), ("30Day", (1, 2)))
    autocorr_methods: tuple = ("Pearson", "Spearman")
    periodicity_ranks: int = 3
    pair_streams: tuple = tuple(itertools.combinations(STREAMS, 2))
    pair_lags: tuple = (0, 1, 2)
    pair_methods: tuple = ("Pearson", "Spearman")
    categorical_characteristics: tuple = (
        "day_of_week",
        "hour_of_day",
        "counterparty_account",
        "counterparty_country",
    )
    binary_fractions: tuple = BINARY_FRACTIONS
    contacts_streams: tuple = ("Calls.Out", "SMS.Out")
    include_geo: bool = True
    cluster_km: float = 1.0
    important_days_fraction: float = 0.05

    def lags_for(self, bucket: str) -> tuple:
        for b, lags in self.autocorr_lags:
            if b == bucket:
                return tuple(lags)
        return ()

    def to_dict(self) -> dict:
        return {
            "streams": list(self.streams),
            "buckets": list(self.buckets),
            "time_variants": list(self.time_variants),
            "include_nonzero": self.include_nonzero,
            "quantiles": list(self.quantiles),
            "spreads": [list(s) for s in self.spreads],
            "autocorr_lags": [[b, list(l)] for b, l in self.autocorr_lags],
            "autocorr_methods": list(self.autocorr_methods),
            "periodicity_ranks": self.periodicity_ranks,
            "pair_streams": [list(p) for p in self.pair_streams],
            "pair_lags": list(self.pair_lags),
            "pair_methods": list(self.pair_methods),
            "categorical_characteristics": list(self.categorical_characteristics),
            "binary_fractions": list(self.binary_fractions),
            "contacts_streams": list(self.contacts_streams),
            "include_geo": self.include_geo,
            "cluster_km": self.cluster_km,
            "important_days_fraction": self.important_days_fraction,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TaxonomyConfig":
        kwargs = {}
        base = cls()
        for key, value in d.items():
            if not hasattr(base, key):
                raise ValueError(f"unknown taxonomy option {key!r}")
            current = getattr(base, key)
            if key == "autocorr_lags":
                kwargs[key] = tuple((b, tuple(l)) for b, l in value)
            elif key in ("spreads", "pair_streams"):
                kwargs[key] = tuple(tuple(v) for v in value)
            elif isinstance(current, tuple):
                kwargs[key] = tuple(value)
            else:
                kwargs[key] = value
        return cls(**kwargs)

    def hash(self) -> str:
        return config_hash(self.to_dict())

    # ---- name enumeration -------------------------------------------------

    def sequence_stats(self, bucket: str, ordered: bool) -> list[str]:
        stats = ["Mean", "Median", "SD", "Max", "Min"]
        stats += [f"Q{p}" for p in self.quantiles]
        stats += [f"Q{a}minusQ{b}" for a, b in self.spreads]
        stats += ["Mean.SD"]
        if not ordered:
            return stats
        stats += ["Slope"]
        for lag in self.lags_for(bucket):
            for method in self.autocorr_methods:
                stats.append(f"AutoCorrelation.L{lag}.{method}")
        for rank in range(self.periodicity_ranks):
            stats.append(f"Periodicity.Magnitude.Rank{rank}")
        stats += [
            "Periodicity.MagnitudeRatio.Rank0_Rank2",
            "Periodicity.MagnitudeRatio.Rank0_AllOtherRanks",
        ]
        if bucket == "Day":
            stats.append("Periodicity.MagnitudeRatio.Weekly_AllOtherRanks")
        stats.append("Periodicity.MagnitudeDifference.Rank0_Rank1")
        return stats

    def specs(
        self,
        country_values: Sequence[str] = ("UNKNOWN",),
        poi_names: Sequence[str] = (),
    ) -> list[tuple]:
        """Full ordered list of feature computation specs.

        country_values supplies the data-dependent CounterpartyCountry
        domain; poi_names the calendar's points of interest.
        """
        specs: list[tuple] = []
        for stream in self.streams:
            for bucket in self.buckets:
                for tv in self.time_variants:
                    for stat in self.sequence_stats(bucket, ordered=True):
                        specs.append(("seq", stream, bucket, tv, False, stat))
                    if self.include_nonzero:
                        for stat in self.sequence_stats(bucket, ordered=False):
                            specs.append(("seq", stream, bucket, tv, True, stat))
        for a, b in self.pair_streams:
            for bucket in self.buckets:
                for lag in self.pair_lags:
                    for method in self.pair_methods:
                        specs.append(("pair", a, b, bucket, lag, method))
            specs.append(("pair_ratio", a, b))
        for stream in self.streams:
            for char in self.categorical_characteristics:
                values = _categorical_domain(char, country_values)
                for v in values:
                    specs.append(("cat", stream, char, v))
                specs.append(("cat", stream, char, None))  # HHI
        for stream in self.streams:
            for which in self.binary_fractions:
                specs.append(("binfrac", stream, which))
        for stream in self.contacts_streams:
            returned = "CallsReturned" if stream.startswith("Calls") else "SMSReturned"
            for stat in ("Degree", "TopContactShare", "HHI", f"{returned}.Fraction"):
                specs.append(("contacts", stream, stat))
        if self.include_geo:
            for stat in GEO_STATS:
                specs.append(("geo", stat, None))
            for poi in poi_names:
                specs.append(("geo", "DistanceToPOI", poi))
        return specs

    def feature_names(
        self,
        country_values: Sequence[str] = ("UNKNOWN",),
        poi_names: Sequence[str] = (),
    ) -> list[str]:
        return [spec_name(s) for s in self.specs(country_values, poi_names)]


def _categorical_domain(char: str, country_values: Sequence[str]) -> list:
    from .aggregate import CHARACTERISTIC_DOMAINS

    domain = CHARACTERISTIC_DOMAINS[char]
    if domain is not None:
        return list(domain)
    if char == "counterparty_country":
        return sorted(set(country_values))
    raise ValueError(f"characteristic {char!r} has no closed domain")


def spec_name(spec: tuple) -> str:
    kind = spec[0]
    if kind == "seq":
        _, stream, bucket, tv, nonzero, stat = spec
        parts = [stream, bucket]
        if tv:
            parts.append(tv)
        if nonzero:
            parts.append("NonZero")
        parts.append(stat)
        return ".".join(parts)
    if kind == "pair":
        _, a, b, bucket, lag, method = spec
        return f"({a} {b}) By{bucket}L0L{lag}.Correlation.{method}"
    if kind == "pair_ratio":
        _, a, b = spec
        return f"({a} {b}) Ratio"
    if kind == "cat":
        _, stream, char, value = spec
        label = CATEGORICAL_LABELS[char]
        if value is None:
            return f"{stream}.By{label}.HHI"
        return f"{stream}.By{label}.Fraction.{value_label(char, value)}"
    if kind == "binfrac":
        _, stream, which = spec
        return f"{stream}.{which}.Fraction"
    if kind == "contacts":
        _, stream, stat = spec
        return f"{stream}.Contacts.{stat}"
    if kind == "geo":
        _, stat, poi = spec
        if stat == "DistanceToPOI":
            return f"Geography.DistanceToPOI.{poi}"
        return f"Geography.{stat}"
    raise ValueError(f"unknown spec kind {kind!r}")


def _parse_sequence_stat(stat: str) -> bool:
    if stat in ("Mean", "Median", "SD", "Max", "Min", "Mean.SD", "Slope"):
        return True
    if _QUANTILE_RE.match(stat) or _SPREAD_RE.match(stat):
        return True
    if _AUTOCORR_RE.match(stat) or _PERIOD_MAG_RE.match(stat):
        return True
    return stat in PERIODICITY_RATIOS


def parse_feature_name(name: str) -> tuple:
    """Parse a canonical feature name into its computation spec.

    Missing-indicator names return ("missing", base_spec); external
    covariates return ("ext", column). Raises ValueError on anything that
    does not fit the grammar.
    """
    if name.endswith(".missing"):
        return ("missing", parse_feature_name(name[: -len(".missing")]))
    if name.startswith("Ext."):
        return ("ext", name[len("Ext.") :])

    m = _PAIR_RE.match(name)
    if m:
        a, b, rest = m.groups()
        for s in (a, b):
            if s not in STREAMS:
                raise ValueError(f"unknown stream {s!r} in {name!r}")
        if rest == "Ratio":
            return ("pair_ratio", a, b)
        mc = _PAIR_CORR_RE.match(rest)
        if mc and mc.group(1) in BUCKETS:
            return ("pair", a, b, mc.group(1), int(mc.group(2)), mc.group(3))
        raise ValueError(f"bad pair feature {name!r}")

    if name.startswith("Geography."):
        rest = name[len("Geography.") :]
        if rest in GEO_STATS:
            return ("geo", rest, None)
        if rest.startswith("DistanceToPOI."):
            return ("geo", "DistanceToPOI", rest[len("DistanceToPOI.") :])
        raise ValueError(f"bad geography feature {name!r}")

    stream = next(
        (s for s in STREAMS if name.startswith(s + ".")), None
    )
    if stream is None:
        raise ValueError(f"no stream prefix in {name!r}")
    rest = name[len(stream) + 1 :]

    mc = _CAT_RE.match(rest)
    if mc:
        label, tail, value_text = mc.group(1), mc.group(2), mc.group(3)
        char = next(
            (c for c, l in CATEGORICAL_LABELS.items() if l == label), None
        )
        if char is not None:
            if tail == "HHI":
                return ("cat", stream, char, None)
            return ("cat", stream, char, label_value(char, value_text))

    for which in BINARY_FRACTIONS:
        if rest == f"{which}.Fraction":
            return ("binfrac", stream, which)
    if rest.startswith("Contacts."):
        return ("contacts", stream, rest[len("Contacts.") :])

    bucket = next((b for b in BUCKETS if rest.startswith(b + ".")), None)
    if bucket is None:
        raise ValueError(f"no bucket in sequence feature {name!r}")
    rest = rest[len(bucket) + 1 :]
    tv = ""
    for candidate in ("AfterFirst", "BetweenFirstAndLast"):
        if rest.startswith(candidate + "."):
            tv = candidate
            rest = rest[len(candidate) + 1 :]
            break
    nonzero = False
    if rest.startswith("NonZero."):
        nonzero = True
        rest = rest[len("NonZero.") :]
    if not _parse_sequence_stat(rest):
        raise ValueError(f"unknown statistic {rest!r} in {name!r}")
    return ("seq", stream, bucket, tv, nonzero, rest)
