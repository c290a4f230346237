#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
#==============================================================================
#                    geodemo v1.0 - REPORT EXPORT MODULE
#        CSV writers for predictions, evaluation reports and plot data
#==============================================================================
"""

import csv
from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np
import pandas as pd

from geodemo import exceptions
from geodemo.evaluation import EvalReport, ErrorRow

from modules.utilities import atomic_output

PREDICTION_COLUMNS = ["geoid", "variable", "category", "raw", "count"]


def _cell(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return value


# ==============================================================================
# PREDICTIONS
# ==============================================================================

@dataclass
class PredictionSet:
    variable: str
    categories: Sequence[str]
    geoids: Sequence[str]
    raw: np.ndarray
    counts: np.ndarray


def export_predictions_csv(path: str, sets: List[PredictionSet]) -> str:
    """
    Export per-unit category predictions in long format

    Args:
        path: Output CSV path
        sets: One PredictionSet per variable; raw holds the model outputs,
              counts the exported values (clamped at zero where needed)

    Returns:
        path
    """
    rows = []
    for s in sets:
        for i, geoid in enumerate(s.geoids):
            for j, category in enumerate(s.categories):
                rows.append((geoid, s.variable, category, float(s.raw[i, j]),
                             float(s.counts[i, j])))
    df = pd.DataFrame(rows, columns=PREDICTION_COLUMNS)
    with atomic_output(path) as f:
        df.to_csv(f, index=False, lineterminator="\n")
    return path


def read_predictions(path: str, variable: str, categories: Sequence[str] = None):
    """
    Read a predictions CSV back into a wide table

    Returns:
        (geoids, categories, raw (n, k), counts (n, k))
    """
    df = pd.read_csv(path, dtype={"geoid": str, "variable": str, "category": str},
                     keep_default_na=False)
    missing = [c for c in PREDICTION_COLUMNS if c not in df.columns]
    if missing:
        raise exceptions.FormatError("%s: missing columns %s" % (path, missing))
    df = df[df["variable"] == variable]
    if df.empty:
        raise exceptions.DataError("%s: no predictions for %r" % (path, variable))
    if categories is None:
        categories = list(dict.fromkeys(df["category"]))
    geoids = sorted(df["geoid"].unique())
    raw = df.pivot(index="geoid", columns="category", values="raw")
    counts = df.pivot(index="geoid", columns="category", values="count")
    raw = raw.reindex(index=geoids, columns=list(categories))
    counts = counts.reindex(index=geoids, columns=list(categories))
    if raw.isna().any().any():
        raise exceptions.DataError("%s: incomplete prediction rows" % path)
    return geoids, list(categories), raw.to_numpy(dtype=float), counts.to_numpy(dtype=float)


# ==============================================================================
# EVALUATION REPORT
# ==============================================================================

def export_report_csv(path: str, report: EvalReport) -> str:
    """
    Export the evaluation report as three CSV blocks separated by a blank
    line: metrics, paired comparisons and the relative-error table
    """
    with atomic_output(path) as f:
        writer = csv.writer(f, lineterminator="\n")

        writer.writerow(["metric", "variable", "category", "value"])
        for row in report.metrics:
            writer.writerow([row.metric, row.variable, row.category, _cell(row.value)])
        writer.writerow([])

        writer.writerow(["comparison", "config_a", "config_b", "p_value"])
        for row in report.comparisons:
            writer.writerow([row.comparison, row.config_a, row.config_b, _cell(row.p_value)])
        writer.writerow([])

        writer.writerow(["threshold", "n_units", "quantile", "rel_error"])
        for row in report.errors:
            writer.writerow([row.threshold, row.n_units, _cell(row.quantile),
                             _cell(row.rel_error)])
    return path


def export_plot_data_csv(path: str, rows_by_resolution: Dict[str, List[ErrorRow]]) -> str:
    """
    Threshold vs quantile relative error, one series per resolution
    """
    with atomic_output(path) as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["resolution", "threshold", "n_units", "quantile", "rel_error"])
        for resolution in sorted(rows_by_resolution):
            for row in rows_by_resolution[resolution]:
                writer.writerow([resolution, row.threshold, row.n_units,
                                 _cell(row.quantile), _cell(row.rel_error)])
    return path


def read_report_blocks(path: str) -> List[List[List[str]]]:
    """
    Split a report CSV into its blocks of rows (header first)
    """
    blocks, current = [], []
    with open(path, "r", encoding="utf-8", newline="") as f:
        for row in csv.reader(f):
            if not row:
                blocks.append(current)
                current = []
            else:
                current.append(row)
    blocks.append(current)
    return blocks
