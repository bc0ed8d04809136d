"""Name grammar: generation, uniqueness, parser round-trip."""

import pytest

from cdrscore.taxonomy import TaxonomyConfig, parse_feature_name, spec_name

# exemplar names lifted from the appendix-style dotted grammar
KNOWN_GOOD = [
    "SMS.Out.Day.SD",
    "SMS.Out.Day.Max",
    "SMS.Out.Day.Periodicity.Magnitude.Rank0",
    "SMS.Out.Day.Periodicity.MagnitudeRatio.Rank0_AllOtherRanks",
    "SMS.Out.Day.AfterFirst.NonZero.Mean.SD",
    "SMS.Out.Day.AfterFirst.Periodicity.MagnitudeRatio.Rank0_Rank2",
    "SMS.Out.Day.NonZero.Q80",
    "SMS.Out.Day.BetweenFirstAndLast.AutoCorrelation.L7.Spearman",
    "SMS.Out.Week.Periodicity.Magnitude.Rank1",
    "SMS.Out.30Day.AutoCorrelation.L2.Spearman",
    "Duration.Out.Week.BetweenFirstAndLast.Mean.SD",
    "Duration.Out.Day.Periodicity.MagnitudeRatio.Weekly_AllOtherRanks",
    "Duration.Out.Day.BetweenFirstAndLast.NonZero.Q50minusQ20",
    "Duration.Out.Week.Periodicity.MagnitudeDifference.Rank0_Rank1",
    "Duration.Out.30Day.AfterFirst.AutoCorrelation.L2.Pearson",
    "Calls.Out.Day.BetweenFirstAndLast.SD",
    "Calls.Out.Week.Periodicity.Magnitude.Rank2",
    "Geography.ImportantPlaces.DaysUsed.Number",
    "(SMS.Out Duration.Out) By30DayL0L1.Correlation.Pearson",
    "(SMS.Out Calls.Out) By30DayL0L2.Correlation.Pearson",
    "Duration.Out.WorkDay.Fraction",
    "(SMS.Out Duration.Out) By30DayL0L1.Correlation.Pearson.missing",
]


@pytest.mark.parametrize("name", KNOWN_GOOD)
def test_exemplar_names_parse(name):
    parse_feature_name(name)


def test_generated_names_unique_and_roundtrip():
    tax = TaxonomyConfig()
    names = tax.feature_names(country_values=("UNKNOWN", "US", "PE"), poi_names=("cap",))
    assert len(names) == len(set(names))
    for name in names:
        spec = parse_feature_name(name)
        assert spec_name(spec) == name


def test_exemplars_are_generated():
    tax = TaxonomyConfig()
    names = set(tax.feature_names())
    for name in KNOWN_GOOD:
        if ".missing" in name or "(" in name or "Geography" in name:
            continue
        assert name in names, name


def test_full_taxonomy_magnitude():
    # paper-scale target: ~5,500 features with variation incl. missing flags
    tax = TaxonomyConfig()
    names = tax.feature_names(country_values=("UNKNOWN", "US", "PE"), poi_names=("cap",))
    total_with_flags = 2 * len(names)
    assert 4000 <= total_with_flags <= 8000, total_with_flags


def test_bad_names_rejected():
    for bad in (
        "SMS.Out.Hour.Mean",
        "Nope.Out.Day.Mean",
        "SMS.Out.Day.Bogus",
        "(SMS.Out Bogus.In) Ratio",
        "Geography.Unknown",
    ):
        with pytest.raises(ValueError):
            parse_feature_name(bad)


def test_reduced_taxonomy_respects_toggles():
    tax = TaxonomyConfig(
        streams=("Calls.Out", "SMS.Out"),
        buckets=("Day",),
        pair_streams=(("Calls.Out", "SMS.Out"),),
        include_geo=False,
        categorical_characteristics=("day_of_week",),
    )
    names = tax.feature_names()
    assert not any(".Week." in n or "By Week" in n for n in names)
    assert not any(n.startswith("Geography") for n in names)
    assert any(n.startswith("(Calls.Out SMS.Out)") for n in names)


def test_config_roundtrip_and_hash():
    tax = TaxonomyConfig(buckets=("Day", "Week"), periodicity_ranks=2)
    again = TaxonomyConfig.from_dict(tax.to_dict())
    assert again == tax
    assert again.hash() == tax.hash()
    assert again.hash() != TaxonomyConfig().hash()
