"""Synthetic population generator with planted structure.

Each subscriber carries a latent type theta that can drive both behavior
(rates, weekly periodicity, trend, call durations) and default risk
(log-odds contribution b*theta). Week-level shocks can be planted that move
default odds AND shift one behavior stream during the same weeks, creating
the spurious cross-sectional association the within-week model families are
designed to ignore.

Everything is deterministic given the seed: per-subscriber RNG streams are
spawned from one SeedSequence, and the draw pattern does not depend on
shock parameters, so plant_shock with magnitude 0 is a byte-level no-op.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .events import EVENT_COLUMNS

BASE_DATE = pd.Timestamp("2016-01-04", tz="UTC")  # a Monday


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    n_subscribers: int = 1000
    span_days: int = 112
    seed: int = 0
    target_default_rate: float = 0.11

    # latent type and its link to default
    latent: str = "gaussian"  # "binary" (responsible/risky) | "gaussian"
    risky_weight: float = 0.5  # binary mode: P(theta = 1)
    signal_strength: float = 0.0  # b, log-odds per unit theta

    # baseline daily behavior (Table-1-scale defaults: ~26 calls/wk, ~24 SMS/wk)
    calls_out_rate: float = 26.0 / 7
    calls_in_rate: float = 3.0
    sms_out_rate: float = 24.4 / 7
    sms_in_rate: float = 3.0
    tower_ping_rate: float = 0.3
    duration_scale_s: float = 74.0
    weekly_amplitude: float = 0.25
    trend_slope: float = 0.0

    # how strongly theta shows in behavior
    rate_loading: float = 0.0  # rates scale by exp(loading * theta)
    amplitude_loading: float = 0.0
    trend_loading: float = 0.0
    duration_loading: float = 0.0

    # social / geographic structure
    contact_pool: int = 15
    contact_concentration: float = 1.0
    n_towers: int = 4
    tower_spread_km: float = 5.0
    home_country: str = "PE"
    foreign_prob: float = 0.03
    postpaid_prob: float = 0.3

    # loans drawn uniformly within this fraction of the span
    loan_window: tuple = (0.5, 1.0)

    # temporal shocks
    weekly_shock_sd: float = 0.0
    shock_weeks: tuple = ()
    shock_magnitude: float = 0.0
    shock_behavior_coupling: float = 0.0  # stream rate x exp(coupling*magnitude)
    shock_stream: str = "SMS_OUT"

    # bureau-like covariates: cov = covariate_signal * theta + noise
    covariate_signal: float = 0.0

    thinning_rate: float = 0.0

    def __post_init__(self):
        if self.n_subscribers < 10:
            raise ValueError("population size must be >= 10")
        if not 0.0 < self.target_default_rate < 1.0:
            raise CalibrationError("target default rate must lie in (0, 1)")
        if self.latent not in ("binary", "gaussian"):
            raise ValueError("latent must be 'binary' or 'gaussian'")
        if not 0.0 <= self.thinning_rate < 1.0:
            raise ValueError("thinning rate must lie in [0, 1)")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["loan_window"] = list(self.loan_window)
        d["shock_weeks"] = list(self.shock_weeks)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        kwargs = dict(d)
        if "loan_window" in kwargs:
            kwargs["loan_window"] = tuple(kwargs["loan_window"])
        if "shock_weeks" in kwargs:
            kwargs["shock_weeks"] = tuple(kwargs["shock_weeks"])
        return cls(**kwargs)


@dataclass
class SynthResult:
    events: pd.DataFrame
    loans: pd.DataFrame
    truth: pd.DataFrame
    window: tuple
    realized_default_rate: float

    def write(self, outdir: str | Path) -> dict:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        paths = {
            "events": outdir / "events.csv",
            "loans": outdir / "loans.csv",
            "truth": outdir / "groundtruth.csv",
        }
        self.events.to_csv(paths["events"], index=False)
        self.loans.to_csv(paths["loans"], index=False)
        self.truth.to_csv(paths["truth"], index=False, float_format=lambda v: repr(float(v)))
        return {k: str(v) for k, v in paths.items()}


def plant_shock(config: SynthConfig, weeks, magnitude: float) -> SynthConfig:
    """Plant a week-level default shock coupled to a behavior level shift.

    Adds `magnitude` to default log-odds for loans granted in `weeks`, and
    multiplies the shock stream's rate by exp(coupling * magnitude) during
    those weeks. magnitude 0 reproduces the unshocked dataset byte-for-byte.
    """
    n_weeks = config.span_days // 7
    for w in weeks:
        if not 0 <= w < n_weeks:
            raise ValueError(f"shock week {w} outside span (0..{n_weeks - 1})")
    coupling = config.shock_behavior_coupling or 1.0
    return dataclasses.replace(
        config,
        shock_weeks=tuple(int(w) for w in weeks),
        shock_magnitude=float(magnitude),
        shock_behavior_coupling=coupling,
    )


def thin(events: pd.DataFrame, rate: float, seed: int) -> pd.DataFrame:
    """Drop each event independently with probability `rate`."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("thinning rate must lie in [0, 1)")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xD407)))
    keep = rng.random(len(events)) >= rate
    return events[keep].reset_index(drop=True)


_STREAM_RATES = (
    ("CALL_OUT", "calls_out_rate"),
    ("CALL_IN", "calls_in_rate"),
    ("SMS_OUT", "sms_out_rate"),
    ("SMS_IN", "sms_in_rate"),
    ("TOWER_PING", "tower_ping_rate"),
)


def _calibrate_alpha(z: np.ndarray, target: float) -> float:
    """Bisection on mean(sigmoid(alpha + z)) = target."""

    def mean_rate(alpha: float) -> float:
        return float(np.mean(1.0 / (1.0 + np.exp(-(alpha + z)))))

    lo, hi = -40.0, 40.0
    if not mean_rate(lo) < target < mean_rate(hi):
        raise CalibrationError(
            f"target rate {target} unreachable given latent/shock structure"
        )
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mean_rate(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _date_strings(span: int) -> list[str]:
    return [
        (BASE_DATE + pd.Timedelta(days=int(d))).strftime("%Y-%m-%dT") for d in range(span)
    ]


def _time_strings() -> list[str]:
    return [
        f"{s // 3600:02d}:{(s % 3600) // 60:02d}:{s % 60:02d}Z" for s in range(86400)
    ]


def _subscriber_events(
    rng: np.random.Generator,
    config: SynthConfig,
    sub: str,
    theta: float,
    dates: list[str],
    times: list[str],
    cols: dict,
) -> None:
    """Append one subscriber's raw event columns (full span) onto cols."""
    span = config.span_days
    days = np.arange(span)

    amp = float(np.clip(config.weekly_amplitude + config.amplitude_loading * theta, 0.0, 0.95))
    trend = config.trend_slope + config.trend_loading * theta
    rate_mult = float(np.exp(config.rate_loading * theta))
    dur_scale = config.duration_scale_s * float(np.exp(config.duration_loading * theta))
    phase = float(rng.uniform(0.0, 2.0 * np.pi))

    shape = 1.0 + amp * np.cos(2.0 * np.pi * days / 7.0 + phase)
    shape = shape * (1.0 + trend * (days - span / 2.0) / span)
    shape = np.clip(shape, 0.0, None)

    shock_mult = np.ones(span)
    if config.shock_weeks:
        in_shock = np.isin(days // 7, config.shock_weeks)
        shock_mult[in_shock] = float(
            np.exp(config.shock_behavior_coupling * config.shock_magnitude)
        )

    home_lat = float(-12.0 + rng.uniform(-0.5, 0.5))
    home_lon = float(-77.0 + rng.uniform(-0.5, 0.5))
    deg_per_km = 1.0 / 111.19
    tower_lat = home_lat + rng.uniform(-1, 1, config.n_towers) * config.tower_spread_km * deg_per_km
    tower_lon = home_lon + rng.uniform(-1, 1, config.n_towers) * config.tower_spread_km * deg_per_km
    tower_w = rng.dirichlet(np.ones(config.n_towers) * 0.8)

    contact_w = (1.0 + np.arange(config.contact_pool)) ** (-config.contact_concentration)
    contact_w = contact_w / contact_w.sum()
    contact_cum = np.cumsum(contact_w)

    contact_names = [f"c{sub}_{k}" for k in range(config.contact_pool)]
    lat_strings = [f"{v:.6f}" for v in tower_lat]
    lon_strings = [f"{v:.6f}" for v in tower_lon]

    for etype, rate_attr in _STREAM_RATES:
        base = getattr(config, rate_attr) * rate_mult
        rates = base * shape
        if etype == config.shock_stream:
            rates = rates * shock_mult
        counts = rng.poisson(rates)
        total = int(counts.sum())
        if total == 0:
            continue
        ev_day = np.repeat(days, counts)
        ev_sec = rng.integers(0, 86400, size=total)
        cols["subscriber_id"] += [sub] * total
        cols["timestamp"] += [dates[d] + times[s] for d, s in zip(ev_day, ev_sec)]
        cols["event_type"] += [etype] * total
        if etype in ("CALL_OUT", "CALL_IN"):
            dur = (np.floor(rng.exponential(dur_scale, size=total)) + 1).astype(int)
            cols["duration_s"] += [str(d) for d in dur]
        else:
            cols["duration_s"] += [""] * total
        if etype == "TOWER_PING":
            cols["counterparty_id"] += [""] * total
            cols["counterparty_account"] += [""] * total
            cols["counterparty_country"] += [""] * total
        else:
            cp = np.searchsorted(contact_cum, rng.random(total))
            cp = np.minimum(cp, config.contact_pool - 1)
            cols["counterparty_id"] += [contact_names[k] for k in cp]
            post = rng.random(total) < config.postpaid_prob
            cols["counterparty_account"] += [
                "POSTPAID" if p else "PREPAID" for p in post
            ]
            foreign = rng.random(total) < config.foreign_prob
            cols["counterparty_country"] += [
                "US" if f else config.home_country for f in foreign
            ]
        t_idx = rng.choice(config.n_towers, size=total, p=tower_w)
        cols["tower_lat"] += [lat_strings[k] for k in t_idx]
        cols["tower_lon"] += [lon_strings[k] for k in t_idx]


def generate(config: SynthConfig) -> SynthResult:
    """Generate (events, loans, ground truth) with planted structure."""
    n = config.n_subscribers
    root = np.random.SeedSequence(config.seed)
    pop_rng = np.random.default_rng(root.spawn(1)[0])
    sub_seeds = root.spawn(n + 1)[1:]

    subs = [f"s{idx:06d}" for idx in range(n)]
    if config.latent == "binary":
        theta = (pop_rng.random(n) < config.risky_weight).astype(float)
    else:
        theta = pop_rng.standard_normal(n)

    lo = int(np.floor(config.loan_window[0] * config.span_days))
    hi = int(np.floor(config.loan_window[1] * config.span_days))
    loan_day = pop_rng.integers(max(lo, 1), max(hi, lo + 1), size=n, endpoint=True)
    loan_day = np.minimum(loan_day, config.span_days)
    default_u = pop_rng.random(n)

    n_weeks = config.span_days // 7 + 2
    shocks = pop_rng.standard_normal(n_weeks) * config.weekly_shock_sd
    for w in config.shock_weeks:
        shocks[w] += config.shock_magnitude

    cov_noise = pop_rng.standard_normal(n)
    cov_entities = pop_rng.poisson(1.5, size=n).astype(float)

    loan_week = np.minimum(loan_day // 7, n_weeks - 1)
    z = config.signal_strength * theta + shocks[loan_week]
    alpha = _calibrate_alpha(z, config.target_default_rate)
    true_p = 1.0 / (1.0 + np.exp(-(alpha + z)))
    default = (default_u < true_p).astype(int)

    dates = _date_strings(config.span_days)
    times = _time_strings()
    cols: dict[str, list] = {c: [] for c in EVENT_COLUMNS}
    for idx, sub in enumerate(subs):
        rng = np.random.default_rng(sub_seeds[idx])
        _subscriber_events(rng, config, sub, float(theta[idx]), dates, times, cols)
    events = pd.DataFrame(cols, columns=EVENT_COLUMNS)
    events = events.sort_values(
        ["subscriber_id", "timestamp", "event_type"], kind="stable"
    ).reset_index(drop=True)
    if config.thinning_rate > 0:
        events = thin(events, config.thinning_rate, config.seed)

    loan_dates = BASE_DATE + pd.to_timedelta(loan_day, unit="D")
    loans = pd.DataFrame(
        {
            "subscriber_id": subs,
            "loan_date": [d.strftime("%Y-%m-%d") for d in loan_dates],
            "default": default,
            "bureau_score": np.round(
                config.covariate_signal * theta + cov_noise, 6
            ),
            "bureau_entities": cov_entities.astype(int),
        }
    )
    truth = pd.DataFrame(
        {
            "subscriber_id": subs,
            "theta": theta,
            "true_p": true_p,
            "shock_exposure": shocks[loan_week],
        }
    )
    window = (
        BASE_DATE.strftime("%Y-%m-%dT%H:%M:%SZ"),
        (BASE_DATE + pd.Timedelta(days=config.span_days)).strftime(
            "%Y-%m-%dT%H:%M:%SZ"
        ),
    )
    return SynthResult(
        events=events,
        loans=loans,
        truth=truth,
        window=window,
        realized_default_rate=float(default.mean()),
    )
