"""Comparison tables and budget plots from a results store.

Every plot is written as SVG next to a CSV twin holding the plotted values.
"""

import logging as log
from pathlib import Path
from typing import Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from ..config import RunStatus, ScenarioKind  # noqa: E402
from ..support.store import get_plots_dir, safe_name  # noqa: E402
from .main import RETRAIN  # noqa: E402
from .results import MIA_COLUMNS, ResultsStore  # noqa: E402

TABLE_COLUMNS = ["method_id", "budget", "seed", "status", "reference", "ta", "ra", "fa_disc", *MIA_COLUMNS, "l2"]

PLOT_METRICS = ["ta", "ra", "fa_raw", "fa_disc", *MIA_COLUMNS, "l2", "rte_ratio", "asr", "victim_accuracy"]

_LABELS = {
    "ta": "Test accuracy (%)",
    "ra": "Retain accuracy (%)",
    "fa_raw": "Forget accuracy (%)",
    "fa_disc": "Forget accuracy gap to retrain (%)",
    "l2": "Normalised l2 distance to retrain",
    "rte_ratio": "Run time / retrain run time",
    "asr": "Attack success rate (%)",
    "victim_accuracy": "Victim class accuracy (%)",
}


def _scenario_rows(store: ResultsStore, scenario: str) -> pd.DataFrame:
    frame = store.frame()
    rows = frame[frame["scenario"] == scenario]
    if rows.empty:
        raise ValueError(f"no results for scenario '{scenario}'")
    return rows


def comparison_frame(store: ResultsStore, scenario: str) -> pd.DataFrame:
    """One row per (method, budget, seed) in `TABLE_COLUMNS` order, the retrain reference first in each group.

    When no retrain row exists the reference column `fa_disc` is blanked.
    """
    rows = _scenario_rows(store, scenario).copy()
    rows["reference"] = (rows["method_id"] == RETRAIN).map({True: "*", False: ""})
    if not (rows["method_id"] == RETRAIN).any():
        log.warning("Scenario '%s' has no retrain reference row, blanking fa_disc", scenario)
        rows["fa_disc"] = float("nan")
    rows["_order"] = range(len(rows))
    rows["_not_reference"] = rows["method_id"] != RETRAIN
    rows = rows.sort_values(["budget", "seed", "_not_reference", "_order"], kind="stable")
    return rows[TABLE_COLUMNS].reset_index(drop=True)


def emit_table(store: ResultsStore, scenario: str, as_csv: bool = False) -> str:
    """Comparison table of one scenario, as aligned text or as CSV.

    The CSV form is written without rounding so parsing it back gives the stored values.
    """
    frame = comparison_frame(store, scenario)
    if as_csv:
        return frame.to_csv(index=False)
    return frame.to_string(index=False, na_rep="", float_format=lambda v: f"{v:.2f}")


def budget_series(store: ResultsStore, scenario: str, metric: str) -> pd.DataFrame:
    """Mean of `metric` per (method, budget) over seeds, with the seed count. Failed rows are left out."""
    if metric not in PLOT_METRICS:
        raise ValueError(f"'{metric}' cannot be plotted, choose one of {', '.join(PLOT_METRICS)}")
    rows = _scenario_rows(store, scenario)
    rows = rows[(rows["status"] == RunStatus.OK.value) & rows[metric].notna()]
    grouped = rows.groupby(["method_id", "budget"], sort=False)[metric]
    series = grouped.agg(["mean", "count"]).reset_index()
    return series.rename(columns={"mean": metric, "count": "seeds"}).sort_values(["method_id", "budget"], kind="stable")


def _plot_series(ax: plt.Axes, series: pd.DataFrame, metric: str) -> None:
    for method_id, group in series.groupby("method_id", sort=False):
        style = "--" if method_id == RETRAIN else "-"
        ax.plot(group["budget"], group[metric], style, marker="o", label=method_id)
    ax.set_xlabel("Unlearning budget (samples)")
    ax.set_ylabel(_LABELS.get(metric, metric.replace("_", " ")))
    ax.grid(True, alpha=0.3)


def emit_budget_plot(store: ResultsStore, metric: str, out_dir: Optional[Path] = None) -> list[Path]:
    """Per scenario, one line per method of `metric` against the budget. Returns the SVG and CSV files written.

    A scenario with a single budget gives single-point series; scenarios without values for `metric` are skipped.
    """
    out_dir = Path(out_dir) if out_dir else get_plots_dir(store.root)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for scenario in store.scenarios():
        series = budget_series(store, scenario, metric)
        if series.empty:
            log.debug("No %s values for scenario '%s'", metric, scenario)
            continue
        stem = out_dir / f"{safe_name(scenario)}-{metric}"
        series.to_csv(stem.with_suffix(".csv"), index=False)
        fig, ax = plt.subplots(figsize=(6, 4))
        _plot_series(ax, series, metric)
        ax.set_title(scenario)
        ax.legend(fontsize="small")
        fig.tight_layout()
        fig.savefig(stem.with_suffix(".svg"), format="svg")
        plt.close(fig)
        written += [stem.with_suffix(".svg"), stem.with_suffix(".csv")]
        log.info("Wrote %s plot for '%s' to '%s'", metric, scenario, stem.with_suffix(".svg"))
    return written


def emit_depoison_plot(store: ResultsStore, out_dir: Optional[Path] = None) -> list[Path]:
    """Clean test accuracy next to the attack readout (ASR, or victim class accuracy for label flips) per depoison scenario."""
    out_dir = Path(out_dir) if out_dir else get_plots_dir(store.root)
    out_dir.mkdir(parents=True, exist_ok=True)
    frame = store.frame()
    written = []
    for scenario in store.scenarios():
        rows = frame[frame["scenario"] == scenario]
        if rows.empty or rows["scenario_kind"].iloc[0] != ScenarioKind.DEPOISON.value:
            continue
        readout = "asr" if rows["asr"].notna().any() else "victim_accuracy"
        clean, attack = budget_series(store, scenario, "ta"), budget_series(store, scenario, readout)
        merged = clean.drop(columns="seeds").merge(attack, on=["method_id", "budget"], how="outer")
        stem = out_dir / f"{safe_name(scenario)}-depoison"
        merged.to_csv(stem.with_suffix(".csv"), index=False, columns=["method_id", "budget", "ta", readout, "seeds"])
        fig, (left, right) = plt.subplots(1, 2, figsize=(11, 4))
        _plot_series(left, clean, "ta")
        left.set_title("Clean accuracy")
        _plot_series(right, attack, readout)
        right.set_title("Attack success rate" if readout == "asr" else "Victim class accuracy")
        for ax in (left, right):
            ax.set_xlabel("Poison budget (samples)")
        right.legend(fontsize="small")
        fig.suptitle(scenario)
        fig.tight_layout()
        fig.savefig(stem.with_suffix(".svg"), format="svg")
        plt.close(fig)
        written += [stem.with_suffix(".svg"), stem.with_suffix(".csv")]
    return written
