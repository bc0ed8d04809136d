"""Command-line pipeline: synth | featurize | train | evaluate | pipeline.

One JSON config file drives every stage; command-line flags override config
values. Exit codes: 0 success, 1 data error, 2 config error. Seeds are
mandatory (no wall-clock defaults), so every command is rerunnable and
byte-identical given the same config. CDRSCORE_THREADS caps parallelism.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from .events import (
    CalendarConfig,
    CdrError,
    clip_to_loan,
    ingest_events,
    ingest_loans,
)
from .evaluate import FoldPlan, build_offset, cross_validate, offset_features, out_of_time_eval
from .features import FeatureMatrix, assemble_matrix
from .learn import FAMILIES, ModelArtifact, TrainConfig, train
from .report import (
    console_table,
    render_acceptance_svg,
    render_roc_svg,
    write_acceptance_csv,
    write_quintiles_csv,
    write_report_json,
    write_roc_csv,
    write_subgroups_csv,
)
from .synth import SynthConfig, generate
from .taxonomy import TaxonomyConfig

EXIT_OK = 0
EXIT_DATA = 1
EXIT_CONFIG = 2


class ConfigError(Exception):
    pass


def load_run_config(path: str | Path, overrides: argparse.Namespace) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            config = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as err:
        raise ConfigError(f"config is not valid JSON: {err}")
    if overrides.seed is not None:
        config["seed"] = overrides.seed
    if "seed" not in config:
        raise ConfigError("config must set a seed (no wall-clock defaults)")
    if getattr(overrides, "outdir", None):
        config.setdefault("paths", {})["workdir"] = overrides.outdir
    for flag in ("plots", "offset", "out_of_time"):
        if getattr(overrides, flag, False):
            config.setdefault("evaluate", {})[flag] = True
    return config


def _workdir(config: dict) -> Path:
    out = Path(config.get("paths", {}).get("workdir", "cdrscore_out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _calendar(config: dict) -> CalendarConfig:
    path = config.get("paths", {}).get("calendar")
    if path:
        return CalendarConfig.from_json(path)
    return CalendarConfig.from_dict(config.get("calendar", {}))


def _window(config: dict) -> tuple:
    if "window" in config:
        return tuple(config["window"])
    raise ConfigError("config must declare the observation window")


def _taxonomy(config: dict) -> TaxonomyConfig:
    return TaxonomyConfig.from_dict(config.get("taxonomy", {}))


def _families(config: dict) -> list[str]:
    families = config.get("families", list(FAMILIES))
    for f in families:
        if f not in FAMILIES:
            raise ConfigError(
                f"unknown model family {f!r}; valid: {', '.join(FAMILIES)}"
            )
    return families


def _train_config(config: dict, family: str) -> TrainConfig:
    opts = dict(config.get("train", {}))
    opts.pop("scope", None)
    return TrainConfig(family=family, seed=int(config["seed"]), **opts)


def _scope_columns(fm: FeatureMatrix, scope: str) -> list[str]:
    if scope == "all":
        return list(fm.frame.columns)
    if scope == "ext":
        return [c for c in fm.frame.columns if c.startswith("Ext.")]
    if scope == "phone":
        return [c for c in fm.frame.columns if not c.startswith("Ext.")]
    raise ConfigError(f"unknown feature scope {scope!r} (phone|ext|all)")


def cmd_synth(config: dict) -> int:
    synth_cfg = SynthConfig.from_dict(
        dict(config.get("synth", {}), seed=int(config["seed"]))
    )
    result = generate(synth_cfg)
    paths = result.write(_workdir(config))
    print(f"wrote {paths['events']} ({len(result.events)} events)")
    print(f"wrote {paths['loans']} ({len(result.loans)} loans)")
    print(f"wrote {paths['truth']} (realized default rate {result.realized_default_rate:.4f})")
    return EXIT_OK


def _load_inputs(config: dict):
    paths = config.get("paths", {})
    workdir = _workdir(config)
    events_path = paths.get("events", workdir / "events.csv")
    loans_path = paths.get("loans", workdir / "loans.csv")
    calendar = _calendar(config)
    window = _window(config)
    mode = config.get("ingest", {}).get("on_error", "fail")
    store = ingest_events(events_path, window, calendar, on_error=mode)
    loans = ingest_loans(loans_path)
    return store, loans


def cmd_featurize(config: dict) -> int:
    workdir = _workdir(config)
    taxonomy = _taxonomy(config)
    store, loans = _load_inputs(config)
    permissive = bool(config.get("ingest", {}).get("permissive", False))
    clipped = clip_to_loan(store, loans, permissive=permissive)
    print(f"ingest: {store.report.summary()}")

    if config.get("evaluate", {}).get("offset", False):
        plan = build_offset(loans, store.window)
        fm_early, fm_late = offset_features(taxonomy, clipped, loans, plan)
        for tag, fm in (("early", fm_early), ("late", fm_late)):
            fm.to_csv(workdir / f"features_{tag}.csv")
            fm.write_meta(workdir / f"features_{tag}.meta.json")
            print(f"features_{tag}: {fm.frame.shape[0]} rows x {fm.frame.shape[1]} cols")
        with open(workdir / "offset_plan.json", "w", encoding="utf-8") as fh:
            json.dump(plan.to_dict(), fh, sort_keys=True)
        if plan.empty_window_ids:
            print(f"warning: {len(plan.empty_window_ids)} late loan(s) have empty offset windows")
        return EXIT_OK

    fm = assemble_matrix(taxonomy, clipped, loans)
    fm.to_csv(workdir / "features.csv")
    fm.write_meta(workdir / "features.meta.json")
    print(
        f"features: {fm.frame.shape[0]} rows x {fm.frame.shape[1]} cols "
        f"({len(fm.drop_log)} constant columns dropped)"
    )
    return EXIT_OK


def _load_features(workdir: Path, name: str = "features.csv") -> FeatureMatrix:
    path = workdir / name
    if not path.exists():
        raise FileNotFoundError(f"{path} not found; run `cdrscore featurize` first")
    return FeatureMatrix.from_csv(path)


def _aligned_labels(fm: FeatureMatrix, loans) -> tuple[np.ndarray, pd.Series]:
    frame = loans.frame.loc[fm.frame.index]
    return frame["default"].to_numpy(), frame["loan_date"]


def cmd_train(config: dict) -> int:
    workdir = _workdir(config)
    fm = _load_features(workdir)
    _, loans = None, ingest_loans(
        config.get("paths", {}).get("loans", workdir / "loans.csv")
    )
    y, dates = _aligned_labels(fm, loans)
    scope = config.get("train", {}).get("scope", "phone")
    columns = _scope_columns(fm, scope)
    for family in _families(config):
        artifact = train(
            fm.frame[columns], y, _train_config(config, family), loan_dates=dates
        )
        path = workdir / f"model_{family}.json"
        artifact.save(path)
        print(f"{family}: {path} fingerprint={artifact.fingerprint['data_hash'][:12]}")
    return EXIT_OK


def cmd_evaluate(config: dict) -> int:
    workdir = _workdir(config)
    eval_cfg = config.get("evaluate", {})
    loans = ingest_loans(config.get("paths", {}).get("loans", workdir / "loans.csv"))
    scope = config.get("train", {}).get("scope", "phone")
    folds = config.get("folds", {})
    plan = FoldPlan(
        n_folds=int(folds.get("n_folds", 5)),
        n_draws=int(folds.get("n_draws", 10)),
        seed=int(config["seed"]),
    )

    fm = _load_features(workdir)
    y, dates = _aligned_labels(fm, loans)
    columns = _scope_columns(fm, scope)

    groups = None
    subgroup_col = eval_cfg.get("subgroup_column")
    if subgroup_col:
        if subgroup_col not in fm.frame.columns:
            raise ConfigError(f"subgroup column {subgroup_col!r} not in features")
        vals = fm.frame[subgroup_col]
        capped = np.minimum(vals.fillna(0).astype(int), 3)
        groups = np.where(capped >= 3, "3+", capped.astype(str))

    oot_inputs = None
    if eval_cfg.get("out_of_time", False):
        early_path = workdir / "features_early.csv"
        late_path = workdir / "features_late.csv"
        if not early_path.exists() or not late_path.exists():
            raise ConfigError(
                "out-of-time evaluation needs offset features; "
                "run `cdrscore featurize --offset` first"
            )
        fm_early = FeatureMatrix.from_csv(early_path)
        fm_late = FeatureMatrix.from_csv(late_path)
        y_e, d_e = _aligned_labels(fm_early, loans)
        y_l, _ = _aligned_labels(fm_late, loans)
        cols_e = _scope_columns(fm_early, scope)
        oot_inputs = (fm_early.frame[cols_e], y_e, d_e, fm_late.frame[cols_e], y_l)

    report: dict = {
        "config": {
            "seed": int(config["seed"]),
            "families": _families(config),
            "folds": plan.to_dict(),
            "scope": scope,
        },
        "n": int(len(y)),
        "default_rate": float(np.mean(y)),
        "families": {},
    }
    for family in _families(config):
        tc = _train_config(config, family)
        cv = cross_validate(fm.frame[columns], y, dates, tc, plan, groups=groups)
        entry = {"cv": cv}
        if oot_inputs is not None:
            X_e, y_e, d_e, X_l, y_l = oot_inputs
            entry["out_of_time"] = out_of_time_eval(X_e, y_e, d_e, X_l, y_l, tc)
        report["families"][family] = entry
        print(f"{family}: CV AUC {cv['mean_auc']:.3f}")

    write_report_json(workdir / "report.json", report)
    write_roc_csv(workdir / "roc.csv", report)
    write_acceptance_csv(workdir / "acceptance.csv", report)
    write_quintiles_csv(workdir / "quintiles.csv", report)
    write_subgroups_csv(workdir / "subgroups.csv", report)
    if eval_cfg.get("plots", False):
        render_roc_svg(workdir / "roc.svg", report)
        render_acceptance_svg(workdir / "acceptance.svg", report)
    print()
    print(console_table(report))
    return EXIT_OK


def cmd_pipeline(config: dict) -> int:
    for step in (cmd_synth, cmd_featurize, cmd_train, cmd_evaluate):
        code = step(config)
        if code != EXIT_OK:
            return code
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "featurize": cmd_featurize,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "pipeline": cmd_pipeline,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cdrscore",
        description="Behavioral credit scoring from mobile phone transaction logs.",
    )
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)
    for name, help_text in (
        ("synth", "generate a synthetic dataset with planted ground truth"),
        ("featurize", "ingest raw logs and build the feature matrix"),
        ("train", "fit model families and write artifacts"),
        ("evaluate", "run the evaluation protocol and write reports"),
        ("pipeline", "synth + featurize + train + evaluate"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to the JSON run config")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--outdir", default=None, help="override working directory")
        p.add_argument("--plots", action="store_true", help="render SVG figures")
        p.add_argument(
            "--offset", action="store_true", help="featurize: build offset halves"
        )
        p.add_argument(
            "--out-of-time",
            dest="out_of_time",
            action="store_true",
            help="evaluate: train early, test late",
        )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_run_config(args.config, args)
        return COMMANDS[args.command](config)
    except (ConfigError, ValueError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (CdrError, FileNotFoundError, KeyError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
