"""
Unit splits, correlation and fit metrics, paired comparisons, the
national-proportions baseline and the relative-error-by-user-count table.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from scipy import stats

from . import census
from . import exceptions


logger = logging.getLogger(__name__)

TEST_FRACTION = 0.10
VALIDATION_FRACTION = 0.10  # of what remains after the test split

TRAIN = "train"
VALIDATION = "validation"
TEST = "test"
SPLITS = (TRAIN, VALIDATION, TEST)

DEFAULT_THRESHOLDS = (1, 10, 100, 1000)
DEFAULT_QUANTILE = 0.95


# ==============================================================================
# SPLITS
# ==============================================================================

def split_sizes(n):
    """ (test, validation, train) sizes: 10% of n for test, then 10% of
    the rest for validation, both rounded up. """
    if n < 10:
        raise exceptions.DataError("need at least 10 units to split, got %d" % n)
    n_test = -(-n // 10)
    n_val = -(-(n - n_test) // 10)
    return n_test, n_val, n - n_test - n_val


@dataclass
class SplitAssignment:
    assignment: Dict[str, str]
    seed: int

    def geoids(self, split):
        return sorted(g for g, s in self.assignment.items() if s == split)

    def counts(self):
        return dict((s, len(self.geoids(s))) for s in SPLITS)


def split_units(geoids, seed):
    geoids = list(geoids)
    if len(set(geoids)) != len(geoids):
        raise exceptions.DataError("geoids are not unique")
    n_test, n_val, _ = split_sizes(len(geoids))
    order = np.random.default_rng(seed).permutation(len(geoids))
    ordered = sorted(geoids)
    assignment = {}
    for rank, i in enumerate(order):
        if rank < n_test:
            split = TEST
        elif rank < n_test + n_val:
            split = VALIDATION
        else:
            split = TRAIN
        assignment[ordered[i]] = split
    return SplitAssignment(assignment, seed)


def write_split(split, out):
    df = pd.DataFrame(sorted(split.assignment.items()), columns=["geoid", "split"])
    df.to_csv(out, index=False, lineterminator="\n")


def read_split(path, seed=-1):
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    if list(df.columns) != ["geoid", "split"]:
        raise exceptions.FormatError("%s: expected columns geoid,split" % path)
    bad = sorted(set(df["split"]) - set(SPLITS))
    if bad:
        raise exceptions.FormatError("%s: unknown split names %s" % (path, bad))
    return SplitAssignment(dict(zip(df["geoid"], df["split"])), seed)


# ==============================================================================
# METRICS
# ==============================================================================

def _paired(pred, truth, minimum):
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise exceptions.DataError("pred and truth must be equal-length sequences")
    if len(pred) < minimum:
        raise exceptions.DataError("need at least %d values, got %d" % (minimum, len(pred)))
    return pred, truth


def pearson_r(pred, truth):
    """ Sample correlation and its two-tailed p-value from the Student t
    approximation with n - 2 degrees of freedom. """
    pred, truth = _paired(pred, truth, 3)
    dx = pred - pred.mean()
    dy = truth - truth.mean()
    sxx, syy = np.dot(dx, dx), np.dot(dy, dy)
    if sxx == 0 or syy == 0:
        raise exceptions.UndefinedCorrelation("correlation of a constant sequence")
    r = float(np.clip(np.dot(dx, dy) / np.sqrt(sxx * syy), -1.0, 1.0))
    n = len(pred)
    if abs(r) == 1.0:
        return r, 0.0
    t = r * np.sqrt((n - 2) / (1.0 - r * r))
    return r, float(2.0 * stats.t.sf(abs(t), n - 2))


def r_squared(pred, truth):
    pred, truth = _paired(pred, truth, 2)
    ss_tot = np.sum((truth - truth.mean()) ** 2)
    if ss_tot == 0:
        raise exceptions.UndefinedCorrelation("R^2 of a constant truth")
    ss_res = np.sum((truth - pred) ** 2)
    return float(1.0 - ss_res / ss_tot)


def paired_t(errors_a, errors_b):
    """ (t statistic, two-tailed p) of mean(errors_a - errors_b) = 0. """
    a, b = _paired(errors_a, errors_b, 2)
    d = a - b
    n = len(d)
    mean = d.mean()
    sd = d.std(ddof=1)
    tiny = np.finfo(float).tiny
    if sd == 0:
        if mean == 0:
            return 0.0, 1.0
        return float(np.copysign(np.inf, mean)), tiny
    t = mean / (sd / np.sqrt(n))
    p = 2.0 * stats.t.sf(abs(t), n - 1)
    return float(t), float(max(p, tiny))


def paired_t_test(errors_a, errors_b):
    return paired_t(errors_a, errors_b)[1]


def squared_errors(pred, truth):
    """ Per-unit squared error summed over categories. """
    pred = np.atleast_2d(np.asarray(pred, dtype=float))
    truth = np.atleast_2d(np.asarray(truth, dtype=float))
    if pred.shape != truth.shape:
        raise exceptions.DataError("prediction shape %s != truth shape %s"
                                   % (pred.shape, truth.shape))
    return np.sum((pred - truth) ** 2, axis=1)


def compare_predictions(truth, pred_a, pred_b):
    """ Paired t-test p-value between the per-unit squared errors of two
    prediction sets of the same units. """
    return paired_t_test(squared_errors(pred_a, truth), squared_errors(pred_b, truth))


def baseline_national(p, variable):
    """ Category counts as national shares times the population. """
    if variable not in census.NATIONAL_SHARES:
        raise exceptions.DataError("no national shares for %r" % variable)
    return np.asarray(census.NATIONAL_SHARES[variable], dtype=float) * float(p)


# ==============================================================================
# REPORT
# ==============================================================================

@dataclass
class MetricRow:
    metric: str
    variable: str
    category: str
    value: float


@dataclass
class ComparisonRow:
    comparison: str
    config_a: str
    config_b: str
    p_value: float


@dataclass
class ErrorRow:
    threshold: int
    n_units: int
    quantile: float
    rel_error: Optional[float]

    @property
    def empty(self):
        return self.rel_error is None


@dataclass
class EvalReport:
    metrics: List[MetricRow] = field(default_factory=list)
    comparisons: List[ComparisonRow] = field(default_factory=list)
    errors: List[ErrorRow] = field(default_factory=list)


def category_metrics(pred, truth, variable, categories):
    """ r, its p-value and R^2 for every category column. """
    pred = np.atleast_2d(np.asarray(pred, dtype=float))
    truth = np.atleast_2d(np.asarray(truth, dtype=float))
    rows = []
    for j, category in enumerate(categories):
        try:
            r, p = pearson_r(pred[:, j], truth[:, j])
            r2 = r_squared(pred[:, j], truth[:, j])
        except exceptions.UndefinedCorrelation as e:
            logger.warning("%s/%s: %s", variable, category, e)
            r = p = r2 = float("nan")
        rows.extend([MetricRow("pearson_r", variable, category, r),
                     MetricRow("pearson_p", variable, category, p),
                     MetricRow("r_squared", variable, category, r2)])
    return rows


def unit_relative_errors(pred, truth):
    """ Per-unit mean over categories of |pred - truth| / max(truth, 1). """
    pred = np.atleast_2d(np.asarray(pred, dtype=float))
    truth = np.atleast_2d(np.asarray(truth, dtype=float))
    if pred.shape != truth.shape:
        raise exceptions.DataError("prediction shape %s != truth shape %s"
                                   % (pred.shape, truth.shape))
    return np.mean(np.abs(pred - truth) / np.maximum(truth, 1.0), axis=1)


def _single_task(preds):
    if isinstance(preds, np.ndarray):
        return True
    return len(preds) > 0 and np.ndim(preds[0]) <= 1


def relative_error_report(preds, truths, users, thresholds=DEFAULT_THRESHOLDS,
                          quantile=DEFAULT_QUANTILE):
    """ Quantile of the per-unit relative error among units with at least
    t users, for each threshold t.

    `preds` and `truths` are either one (n, k) table (array or list of
    per-unit count vectors) or a list of such tables, one per task; a
    unit's error is then averaged across tasks. Rows with no qualifying
    unit have rel_error None.
    """
    if not 0.0 < quantile < 1.0:
        raise exceptions.ConfigError("quantile must lie in (0, 1), got %s" % quantile)
    if _single_task(preds):
        preds, truths = [preds], [truths]
    if len(preds) != len(truths) or not preds:
        raise exceptions.DataError("need matching prediction and truth tasks")
    per_task = [unit_relative_errors(p, t) for p, t in zip(preds, truths)]
    users = np.asarray(users)
    if any(len(e) != len(users) for e in per_task):
        raise exceptions.DataError("user counts do not align with predictions")
    errors = np.mean(np.vstack(per_task), axis=0)

    rows = []
    for t in thresholds:
        selected = errors[users >= t]
        value = float(np.quantile(selected, quantile)) if len(selected) else None
        rows.append(ErrorRow(int(t), int(len(selected)), quantile, value))
    return rows
