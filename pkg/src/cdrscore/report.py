"""Evaluation report artifacts: report.json, delimited summaries, rendered
figures (mean line + SD ribbon across fold draws), and the console table."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .util import canonical_json, jsonable

FAMILY_LABEL = {
    "RF": "Random Forest",
    "LOGIT_STEPWISE": "Logistic, stepwise BIC",
    "RF_WEEKLY_ENSEMBLE": "Random Forest Weekly Ensemble",
    "OLS_FE_STEPWISE": "OLS FE, stepwise BIC",
}


def write_report_json(path: str | Path, report: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(canonical_json(jsonable(report)))


def _write_csv(path: str | Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def write_roc_csv(path: str | Path, report: dict) -> None:
    rows = []
    for family, res in report["families"].items():
        roc = res["cv"]["roc"]
        for fpr, tm, ts in zip(roc["fpr"], roc["tpr_mean"], roc["tpr_sd"]):
            rows.append([family, repr(float(fpr)), repr(float(tm)), repr(float(ts))])
    _write_csv(path, ["family", "fpr", "tpr_mean", "tpr_sd"], rows)


def write_acceptance_csv(path: str | Path, report: dict) -> None:
    rows = []
    for family, res in report["families"].items():
        acc = res["cv"]["acceptance"]
        for q, rm, rs in zip(acc["fraction"], acc["rate_mean"], acc["rate_sd"]):
            rows.append([family, repr(float(q)), repr(float(rm)), repr(float(rs))])
    _write_csv(path, ["family", "fraction_accepted", "default_rate_mean", "default_rate_sd"], rows)


def write_quintiles_csv(path: str | Path, report: dict) -> None:
    rows = []
    for family, res in report["families"].items():
        for draw, ratio in enumerate(res["cv"]["quintile"]["per_draw_ratio"]):
            rows.append(
                [family, draw, "" if ratio is None else repr(float(ratio))]
            )
    _write_csv(path, ["family", "draw", "top_to_bottom_ratio"], rows)


def write_subgroups_csv(path: str | Path, report: dict) -> None:
    rows = []
    for family, res in report["families"].items():
        for group, row in (res["cv"].get("subgroups") or {}).items():
            rows.append(
                [
                    family,
                    group,
                    row["n"],
                    "" if row["mean_auc"] is None else repr(float(row["mean_auc"])),
                    "" if row.get("sd_auc") is None else repr(float(row["sd_auc"])),
                ]
            )
    _write_csv(path, ["family", "group", "n", "mean_auc", "sd_auc"], rows)


def render_roc_svg(path: str | Path, report: dict) -> None:
    fig, ax = plt.subplots(figsize=(6, 5), constrained_layout=True)
    for family, res in report["families"].items():
        roc = res["cv"]["roc"]
        fpr = np.asarray(roc["fpr"])
        mean = np.asarray(roc["tpr_mean"])
        sd = np.asarray(roc["tpr_sd"])
        line, = ax.plot(fpr, mean, label=FAMILY_LABEL.get(family, family))
        ax.fill_between(fpr, mean - sd, mean + sd, alpha=0.2, color=line.get_color())
    ax.plot([0, 1], [0, 1], ls="--", c="grey", lw=0.8)
    ax.set_xlabel("False positive rate")
    ax.set_ylabel("True positive rate")
    ax.set_title("ROC (mean and SD over fold draws)")
    ax.legend(loc="lower right", fontsize=8)
    fig.savefig(path, format="svg")
    plt.close(fig)


def render_acceptance_svg(path: str | Path, report: dict) -> None:
    fig, ax = plt.subplots(figsize=(6, 5), constrained_layout=True)
    for family, res in report["families"].items():
        acc = res["cv"]["acceptance"]
        q = np.asarray(acc["fraction"])
        mean = np.asarray(acc["rate_mean"])
        sd = np.asarray(acc["rate_sd"])
        line, = ax.plot(q, mean, label=FAMILY_LABEL.get(family, family))
        ax.fill_between(q, mean - sd, mean + sd, alpha=0.2, color=line.get_color())
    ax.set_xlabel("Proportion of borrowers accepted")
    ax.set_ylabel("Default rate among accepted")
    ax.set_title("Default rate by acceptance (mean and SD over fold draws)")
    ax.legend(loc="lower right", fontsize=8)
    fig.savefig(path, format="svg")
    plt.close(fig)


def console_table(report: dict) -> str:
    """Family x sample AUC table mirroring the headline results layout."""
    has_oot = any("out_of_time" in res for res in report["families"].values())
    lines = []
    header = f"{'Model':<34} {'CV AUC':>10} {'(SD)':>8}"
    if has_oot:
        header += f" {'OOT AUC':>10}"
    lines.append(header)
    lines.append("-" * len(header))
    for family, res in report["families"].items():
        cv = res["cv"]
        sd = cv["sd_auc"]
        row = (
            f"{FAMILY_LABEL.get(family, family):<34} "
            f"{cv['mean_auc']:>10.3f} "
            f"{('(' + format(sd, '.3f') + ')') if sd is not None else '':>8}"
        )
        if has_oot:
            oot = res.get("out_of_time")
            row += f" {oot['auc']:>10.3f}" if oot else f" {'-':>10}"
        lines.append(row)
    if "default_rate" in report:
        lines.append(f"{'Default rate':<34} {report['default_rate']:>10.3f}")
    if "n" in report:
        lines.append(f"{'N':<34} {report['n']:>10d}")
    return "\n".join(lines)
